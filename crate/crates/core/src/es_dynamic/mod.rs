//! Stochastic extremum seeking for a dynamic plant with an output equilibrium map.
//!
//! The scheme drives θ̂ with a low-pass gradient estimate ξ and a washout state
//! ζ. Freezing the plant at its quasi-steady state x = l(θ) gives the reduced
//! system in error coordinates (θ̃, ξ, ζ̃); [`AverageSystem`] analyses its
//! average: equilibrium, small-amplitude expansion, Jacobian, eigenvalues and
//! the step-size threshold for local stability.

mod analysis;
mod experiment;
mod plant;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::es_static::NoiseSpec;
use crate::processes::ProcessSpec;
use crate::Scalar;

pub use analysis::{
    characteristic_polynomial, eigenvalue_oracle, eigenvalues_closed_form, spectral_radius, AmplitudeRow,
    AsymptoticEquilibrium, AverageEquilibrium, AverageSystem, StabilityThreshold,
};
pub use experiment::{
    reduced_success_study, run_closed_loop, run_reduced, ClosedLoopSetup, DynamicRun, DynamicSummary, ReducedStudy,
};
pub use plant::{check_equilibrium_map, LinearTestPlant, Plant};

/// ς(z) = h(l(θ* + z)) − h(l(θ*)), the output equilibrium map centred at its peak.
#[derive(Clone)]
pub enum ReducedMap<T> {
    /// Σ c_i z^i; coefficients start at the constant term.
    Polynomial(Vec<T>),
    /// Arbitrary smooth ς; derivatives by central differences with step `fd_step`.
    Custom {
        value: Arc<dyn Fn(T) -> T + Send + Sync>,
        fd_step: T,
    },
}

impl<T: fmt::Debug> fmt::Debug for ReducedMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Self::Custom { fd_step, .. } => f
                .debug_struct("Custom")
                .field("fd_step", fd_step)
                .finish_non_exhaustive(),
        }
    }
}

impl<T: Scalar> ReducedMap<T> {
    pub fn polynomial(coefficients: Vec<T>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coefficients", "must be finite"));
        }
        let map = Self::Polynomial(coefficients);
        map.validate()?;
        Ok(map)
    }

    /// Custom ς with finite-difference step a·1e-3.
    pub fn custom<F>(value: F, amplitude: T) -> Result<Self>
    where
        F: Fn(T) -> T + Send + Sync + 'static,
    {
        if !(amplitude > T::zero()) {
            return Err(invalid("amplitude", "must be positive"));
        }
        let map = Self::Custom {
            value: Arc::new(value),
            fd_step: amplitude * T::of(1e-3),
        };
        map.validate()?;
        Ok(map)
    }

    /// ς(0) = 0 and ς'(0) = 0 within 1e-8.
    pub fn validate(&self) -> Result<()> {
        let tol = T::tol(1e-8);
        let at0 = self.value(T::zero());
        if !(at0.abs() <= tol) {
            return Err(invalid("varsigma", format!("ς(0) = {at0}, expected 0")));
        }
        let slope = self.derivative(T::zero());
        if !(slope.abs() <= tol) {
            return Err(invalid("varsigma", format!("ς'(0) = {slope}, expected 0")));
        }
        Ok(())
    }

    pub fn value(&self, z: T) -> T {
        match self {
            Self::Polynomial(c) => c.iter().rev().fold(T::zero(), |acc, &ci| acc * z + ci),
            Self::Custom { value, .. } => value(z),
        }
    }

    pub fn derivative(&self, z: T) -> T {
        match self {
            Self::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(T::zero(), |acc, (i, &ci)| acc * z + T::of(i as f64) * ci),
            Self::Custom { value, fd_step } => (value(z + *fd_step) - value(z - *fd_step)) / (T::of(2.0) * *fd_step),
        }
    }

    /// ς''(0).
    pub fn second_derivative_at_zero(&self) -> T {
        match self {
            Self::Polynomial(c) => T::of(2.0) * c.get(2).copied().unwrap_or_else(T::zero),
            Self::Custom { value, fd_step } => {
                let h = fd_step.max(T::of(1e-4));
                (value(h) - T::of(2.0) * value(T::zero()) + value(-h)) / (h * h)
            }
        }
    }

    /// ς'''(0).
    pub fn third_derivative_at_zero(&self) -> T {
        match self {
            Self::Polynomial(c) => T::of(6.0) * c.get(3).copied().unwrap_or_else(T::zero),
            Self::Custom { value, fd_step } => {
                let h = fd_step.max(T::of(1e-3));
                let two = T::of(2.0);
                (value(two * h) - two * value(h) + two * value(-h) - value(-two * h)) / (two * h * h * h)
            }
        }
    }

    /// z ↦ ς(−z).
    pub fn reflected(&self) -> Self {
        match self {
            Self::Polynomial(c) => Self::Polynomial(
                c.iter()
                    .enumerate()
                    .map(|(i, &ci)| if i % 2 == 1 { -ci } else { ci })
                    .collect(),
            ),
            Self::Custom { value, fd_step } => {
                let inner = value.clone();
                Self::Custom {
                    value: Arc::new(move |z| inner(-z)),
                    fd_step: *fd_step,
                }
            }
        }
    }
}

/// Which plant output enters the filters at step k.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputTiming {
    /// h(x_k): the output measured before the probed parameter acts.
    #[default]
    Current,
    /// h(x_{k+1}): the output after the plant has responded to θ̂_k + a sin v_{k+1}.
    AfterUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicEsParams<T> {
    /// ϱ, the integrator gain on θ̂.
    pub gain: T,
    /// w₁, the gradient low-pass gain.
    pub w1: T,
    /// w₂, the washout gain.
    pub w2: T,
    pub amplitude: T,
    pub epsilon: T,
    pub probe_sigma: T,
    pub noise: Option<NoiseSpec<T>>,
    #[serde(default)]
    pub output_timing: OutputTiming,
}

impl<T: Scalar> DynamicEsParams<T> {
    /// Everything but ε must be positive; ε may be zero (frozen filters).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gain", self.gain),
            ("w1", self.w1),
            ("w2", self.w2),
            ("amplitude", self.amplitude),
            ("probe_sigma", self.probe_sigma),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(invalid(name, "must be positive and finite"));
            }
        }
        if !(self.epsilon >= T::zero()) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon", "must be nonnegative and finite"));
        }
        if let Some(noise) = &self.noise {
            noise.process().validate()?;
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: T) -> Self {
        Self { epsilon, ..*self }
    }

    pub fn with_amplitude(&self, amplitude: T) -> Self {
        Self { amplitude, ..*self }
    }

    /// Probe stream first, then the measurement noise when present.
    pub fn perturbation(&self) -> Vec<ProcessSpec> {
        let mut specs = vec![ProcessSpec::IidGaussian {
            sigma: self.probe_sigma.as_f64(),
        }];
        if let Some(noise) = &self.noise {
            specs.push(noise.process());
        }
        specs
    }
}

/// Reduced-system state in error coordinates (θ̃, ξ, ζ̃).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReducedState<T> {
    pub theta: T,
    pub xi: T,
    pub zeta: T,
}

impl<T: Scalar> ReducedState<T> {
    pub fn new(theta: T, xi: T, zeta: T) -> Self {
        Self { theta, xi, zeta }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.theta, self.xi, self.zeta]
    }

    pub fn distance(&self, other: &Self) -> T {
        crate::distance(&self.to_array(), &other.to_array())
    }

    fn finite_or(self, index: usize) -> Result<Self> {
        if crate::numerics::is_blown_up(&self.to_array()) {
            Err(Error::BlowUp { index })
        } else {
            Ok(self)
        }
    }
}

/// Closed-loop state (x, θ̂, ξ, ζ) in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState<T> {
    pub x: Vec<T>,
    pub theta_hat: T,
    pub xi: T,
    pub zeta: T,
}

/// One step of the reduced system with probe v_{k+1} and noise W_{k+1}.
pub fn reduced_step<T: Scalar>(
    map: &ReducedMap<T>,
    params: &DynamicEsParams<T>,
    state: &ReducedState<T>,
    v: T,
    w: T,
) -> Result<ReducedState<T>> {
    let eps = params.epsilon;
    let s = v.sin();
    let output = map.value(state.theta + params.amplitude * s);
    ReducedState {
        theta: state.theta + eps * params.gain * state.xi,
        xi: state.xi - eps * params.w1 * state.xi + eps * params.w1 * (output - state.zeta + w) * s,
        zeta: state.zeta - eps * params.w2 * state.zeta + eps * params.w2 * (output + w),
    }
    .finite_or(1)
}

/// One step of the full closed loop with probe v_{k+1} and noise W_{k+1}.
pub fn closed_loop_step<T: Scalar, P: Plant<T> + ?Sized>(
    plant: &P,
    params: &DynamicEsParams<T>,
    state: &ClosedLoopState<T>,
    v: T,
    w: T,
) -> Result<ClosedLoopState<T>> {
    let eps = params.epsilon;
    let s = v.sin();
    let theta = state.theta_hat + params.amplitude * s;
    let u = plant.control(&state.x, theta);
    let mut x_next = vec![T::zero(); state.x.len()];
    plant.dynamics(&state.x, u, &mut x_next);
    let y = match params.output_timing {
        OutputTiming::Current => plant.output(&state.x),
        OutputTiming::AfterUpdate => plant.output(&x_next),
    } + w;
    let next = ClosedLoopState {
        theta_hat: state.theta_hat + eps * params.gain * state.xi,
        xi: state.xi - eps * params.w1 * state.xi + eps * params.w1 * (y - state.zeta) * s,
        zeta: state.zeta - eps * params.w2 * state.zeta + eps * params.w2 * y,
        x: x_next,
    };
    let mut all = next.x.clone();
    all.extend([next.theta_hat, next.xi, next.zeta]);
    if crate::numerics::is_blown_up(&all) {
        return Err(Error::BlowUp { index: 1 });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn params() -> DynamicEsParams<f64> {
        DynamicEsParams {
            gain: 1.0,
            w1: 1.0,
            w2: 1.0,
            amplitude: 0.1,
            epsilon: 0.01,
            probe_sigma: 1.0,
            noise: None,
            output_timing: OutputTiming::Current,
        }
    }

    #[test]
    fn polynomial_map_and_derivatives() {
        let m = ReducedMap::<f64>::polynomial(vec![0.0, 0.0, -1.0, 0.1]).unwrap();
        assert_eq!(m.value(2.0), -4.0 + 0.8);
        assert!((m.derivative(2.0) - (-4.0 + 1.2)).abs() < 1e-15);
        assert_eq!(m.second_derivative_at_zero(), -2.0);
        assert!((m.third_derivative_at_zero() - 0.6).abs() < 1e-15);
        let r = m.reflected();
        assert_eq!(r.value(2.0), m.value(-2.0));
    }

    #[test]
    fn map_must_peak_at_zero() {
        assert!(ReducedMap::polynomial(vec![1.0, 0.0, -1.0]).is_err());
        assert!(ReducedMap::polynomial(vec![0.0, 0.5, -1.0]).is_err());
        assert!(ReducedMap::custom(|z: f64| (z - 0.1).powi(2), 0.1).is_err());
    }

    #[test]
    fn custom_map_derivatives() {
        let m = ReducedMap::custom(|z: f64| -z * z + 0.1 * z * z * z, 0.05).unwrap();
        assert!((m.second_derivative_at_zero() + 2.0).abs() < 1e-6);
        assert!((m.third_derivative_at_zero() - 0.6).abs() < 1e-5);
        assert!((m.derivative(0.3) - (-0.6 + 0.3 * 0.09)).abs() < 1e-9);
    }

    #[test]
    fn zero_map_stays_at_origin() {
        let m = ReducedMap::polynomial(vec![0.0]).unwrap();
        let mut s = ReducedState::default();
        for k in 0..100 {
            s = reduced_step(&m, &params(), &s, 0.3 * k as f64, 0.0).unwrap();
        }
        assert_eq!(s, ReducedState::default());
    }

    #[test]
    fn reduced_step_by_hand() {
        // ς(z) = -z², v = π/2 so sin v = 1, θ̃ = 0.5, ξ = 0.25, ζ̃ = -0.5, W = 0.125.
        // ς(0.5 + 0.1) = -0.36.
        let m = ReducedMap::polynomial(vec![0.0, 0.0, -1.0]).unwrap();
        let p = DynamicEsParams {
            gain: 2.0,
            w1: 4.0,
            w2: 0.5,
            epsilon: 0.5,
            ..params()
        };
        let s = ReducedState::new(0.5, 0.25, -0.5);
        let n = reduced_step(&m, &p, &s, std::f64::consts::FRAC_PI_2, 0.125).unwrap();
        assert!((n.theta - 0.75).abs() < 1e-15);
        // ξ⁺ = 0.25 - 0.5 + 2·(-0.36 + 0.5 + 0.125) = 0.28
        assert!((n.xi - 0.28).abs() < 1e-15);
        // ζ̃⁺ = -0.5 + 0.125 + 0.25·(-0.36 + 0.125) = -0.43375
        assert!((n.zeta + 0.43375).abs() < 1e-15);
    }
}
