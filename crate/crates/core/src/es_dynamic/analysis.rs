use num_complex::Complex;
use serde::Serialize;

use super::{DynamicEsParams, ReducedMap, ReducedState};
use crate::averaging::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::numerics::{cubic_roots, defaults, is_blown_up, newton_scalar, GaussianQuadrature, NewtonOptions};
use crate::processes::gaussian_sine_moment;
use crate::Scalar;

/// Equilibrium (θ̃, ξ, ζ̃) of the average system plus the expansion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageEquilibrium<T> {
    pub theta: T,
    /// Always exactly 0.
    pub xi: T,
    pub zeta: T,
    pub b1: T,
    pub b2: T,
    /// |∫ς(θ̃ + a sin y) sin y μ(dy)| at the returned θ̃.
    pub residual: T,
}

impl<T: Scalar> AverageEquilibrium<T> {
    pub fn state(&self) -> ReducedState<T> {
        ReducedState::new(self.theta, self.xi, self.zeta)
    }
}

/// Small-amplitude predictions θ̃ ≈ b₂a², ζ̃ ≈ ς''(0)(1 − e^{−2σ²})a²/4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticEquilibrium<T> {
    pub b1: T,
    pub b2: T,
    pub theta: T,
    pub zeta: T,
}

/// ε₁* and the data used to certify it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityThreshold<T> {
    pub epsilon_star: T,
    pub j21: T,
    /// (ε, spectral radius) on the verification grid below ε₁*.
    pub verified: Vec<(T, T)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeRow {
    pub amplitude: f64,
    pub j21: Option<f64>,
    /// √(w₁² + 4ϱJ₂₁) < w₁, i.e. J₂₁ < 0.
    pub admissible: bool,
    pub epsilon_star: Option<f64>,
}

/// Average of the reduced system for one ς and parameter set.
#[derive(Debug)]
pub struct AverageSystem<T> {
    map: ReducedMap<T>,
    params: DynamicEsParams<T>,
    quad: GaussianQuadrature<T>,
}

impl<T: Scalar> AverageSystem<T> {
    pub fn new(map: ReducedMap<T>, params: DynamicEsParams<T>) -> Result<Self> {
        Self::with_nodes(map, params, defaults::QUADRATURE_NODES)
    }

    pub fn with_nodes(map: ReducedMap<T>, params: DynamicEsParams<T>, nodes: usize) -> Result<Self> {
        params.validate()?;
        let quad = GaussianQuadrature::with_nodes(params.probe_sigma, nodes)?;
        Ok(Self { map, params, quad })
    }

    pub fn map(&self) -> &ReducedMap<T> {
        &self.map
    }

    pub fn params(&self) -> &DynamicEsParams<T> {
        &self.params
    }

    /// ∫ ς(θ̃ + a sin y) sin y μ(dy).
    pub fn sine_integral(&self, theta: T) -> Result<T> {
        let a = self.params.amplitude;
        self.quad.expect(|y| self.map.value(theta + a * y.sin()) * y.sin())
    }

    /// ∫ ς(θ̃ + a sin y) μ(dy).
    pub fn mean_integral(&self, theta: T) -> Result<T> {
        let a = self.params.amplitude;
        self.quad.expect(|y| self.map.value(theta + a * y.sin()))
    }

    /// ∫ ς'(θ̃ + a sin y) sin y μ(dy).
    pub fn sine_slope_integral(&self, theta: T) -> Result<T> {
        let a = self.params.amplitude;
        self.quad.expect(|y| self.map.derivative(theta + a * y.sin()) * y.sin())
    }

    /// ∫ ς'(θ̃ + a sin y) μ(dy).
    pub fn mean_slope_integral(&self, theta: T) -> Result<T> {
        let a = self.params.amplitude;
        self.quad.expect(|y| self.map.derivative(theta + a * y.sin()))
    }

    /// Average increment divided by ε. Measurement noise has zero mean and is
    /// independent of the probe, so it does not appear.
    pub fn rhs(&self, state: &ReducedState<T>) -> Result<[T; 3]> {
        let p = &self.params;
        Ok([
            p.gain * state.xi,
            -p.w1 * state.xi + p.w1 * self.sine_integral(state.theta)?,
            -p.w2 * state.zeta + p.w2 * self.mean_integral(state.theta)?,
        ])
    }

    /// Iterates the discrete average system from `initial`.
    pub fn iterate(&self, initial: ReducedState<T>, steps: usize) -> Result<Trajectory<T>> {
        let eps = self.params.epsilon;
        let mut data = Vec::with_capacity(3 * (steps + 1));
        let mut s = initial;
        data.extend(s.to_array());
        for k in 0..steps {
            let f = self.rhs(&s)?;
            s = ReducedState::new(s.theta + eps * f[0], s.xi + eps * f[1], s.zeta + eps * f[2]);
            if is_blown_up(&s.to_array()) {
                return Err(Error::BlowUp { index: k + 1 });
            }
            data.extend(s.to_array());
        }
        Trajectory::from_rows(eps, 3, data)
    }

    /// Damped Newton on ∫ς(θ̃ + a sin y) sin y μ(dy) = 0 from θ̃ = 0, then ζ̃ from
    /// the washout equation and ξ = 0.
    pub fn solve_equilibrium(&self) -> Result<AverageEquilibrium<T>> {
        let opts = NewtonOptions {
            f_tol: T::zero(),
            x_tol: T::epsilon() / T::of(8.0),
            max_iter: defaults::NEWTON_MAX_ITER,
        };
        let g = |t: T| self.sine_integral(t).unwrap_or_else(|_| T::nan());
        let dg = |t: T| self.sine_slope_integral(t).unwrap_or_else(|_| T::nan());
        let theta = newton_scalar(g, dg, T::zero(), opts)?;
        let residual = self.sine_integral(theta)?.abs();
        if !(residual <= T::tol(defaults::EQUILIBRIUM_TOL)) {
            return Err(Error::NonConvergence {
                method: "average equilibrium",
                iterations: opts.max_iter,
                residual: residual.as_f64(),
            });
        }
        let zeta = self.mean_integral(theta)?;
        let (b1, b2) = self.expansion_coefficients();
        Ok(AverageEquilibrium {
            theta,
            xi: T::zero(),
            zeta,
            b1,
            b2,
            residual,
        })
    }

    fn expansion_coefficients(&self) -> (T, T) {
        let s2 = self.params.probe_sigma * self.params.probe_sigma;
        let d2 = self.map.second_derivative_at_zero();
        let d3 = self.map.third_derivative_at_zero();
        let e2 = (T::of(-2.0) * s2).exp();
        let e8 = (T::of(-8.0) * s2).exp();
        let b2 = -d3 * (T::of(3.0) - T::of(4.0) * e2 + e8) / (T::of(24.0) * d2 * (T::one() - e2));
        (T::zero(), b2)
    }

    /// Closed-form b₁ = 0 and b₂ with the O(a²) predictions for θ̃ and ζ̃.
    pub fn asymptotic_equilibrium(&self) -> Result<AsymptoticEquilibrium<T>> {
        let d2 = self.map.second_derivative_at_zero();
        if d2 == T::zero() {
            return Err(invalid("varsigma", "ς''(0) must be nonzero"));
        }
        let (b1, b2) = self.expansion_coefficients();
        let a = self.params.amplitude;
        let s2 = self.params.probe_sigma * self.params.probe_sigma;
        let zeta = d2 * (T::one() - (T::of(-2.0) * s2).exp()) * a * a / T::of(4.0);
        Ok(AsymptoticEquilibrium {
            b1,
            b2,
            theta: b2 * a * a,
            zeta,
        })
    }

    /// J₂₁ = w₁ ∫ς'(θ̃ + a sin y) sin y μ(dy) at the equilibrium.
    pub fn j21(&self, eq: &AverageEquilibrium<T>) -> Result<T> {
        Ok(self.params.w1 * self.sine_slope_integral(eq.theta)?)
    }

    /// J₃₁ = w₂ ∫ς'(θ̃ + a sin y) μ(dy) at the equilibrium.
    pub fn j31(&self, eq: &AverageEquilibrium<T>) -> Result<T> {
        Ok(self.params.w2 * self.mean_slope_integral(eq.theta)?)
    }

    /// Jacobian of the discrete average map at the equilibrium.
    pub fn jacobian(&self, eq: &AverageEquilibrium<T>) -> Result<[[T; 3]; 3]> {
        let p = &self.params;
        let eps = p.epsilon;
        let (zero, one) = (T::zero(), T::one());
        Ok([
            [one, eps * p.gain, zero],
            [eps * self.j21(eq)?, one - eps * p.w1, zero],
            [eps * self.j31(eq)?, zero, one - eps * p.w2],
        ])
    }

    /// ε₁*: the smallest ε at which the spectral radius reaches 1.
    ///
    /// Scans (0, 2/w₂] (the washout eigenvalue 1 − εw₂ leaves the unit disc
    /// there at the latest), bisects the first crossing, and re-checks a
    /// 10-point grid below the result.
    pub fn stability_threshold(&self) -> Result<StabilityThreshold<T>> {
        let eq = self.solve_equilibrium()?;
        let j21 = self.j21(&eq)?;
        self.threshold_for(j21)
    }

    pub fn threshold_for(&self, j21: T) -> Result<StabilityThreshold<T>> {
        if !(j21 < T::zero()) {
            return Err(Error::Unstable(format!(
                "J21 = {j21} is not negative; an eigenvalue sits on or outside the unit circle for every ε"
            )));
        }
        let radius = |eps: T| spectral_radius(&eigenvalues_closed_form(&self.params.with_epsilon(eps), j21));
        let stable = |eps: T| radius(eps) < T::one();
        let upper = T::of(2.0) / self.params.w2;
        const SCAN: usize = 2000;
        let mut lo = T::zero();
        let mut hi = upper;
        for i in 1..=SCAN {
            let eps = upper * T::of(i as f64 / SCAN as f64);
            if !stable(eps) {
                hi = eps;
                break;
            }
            lo = eps;
        }
        if lo == T::zero() && !stable(hi / T::of(SCAN as f64 * 1e3)) {
            return Err(Error::Unstable("no stable ε found".into()));
        }
        let tol = T::tol(defaults::THRESHOLD_TOL) * T::of(0.5);
        while hi - lo > tol {
            let mid = (lo + hi) / T::of(2.0);
            if mid == lo || mid == hi {
                break;
            }
            if stable(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let epsilon_star = lo;
        let verified: Vec<(T, T)> = (1..=10)
            .map(|j| {
                let eps = epsilon_star * T::of(j as f64 / 11.0);
                (eps, radius(eps))
            })
            .collect();
        if let Some((eps, r)) = verified.iter().find(|(_, r)| !(*r < T::one())) {
            return Err(Error::Unstable(format!(
                "spectral radius {r} at ε = {eps} below the threshold"
            )));
        }
        Ok(StabilityThreshold {
            epsilon_star,
            j21,
            verified,
        })
    }

    /// J₂₁ per amplitude, with ε₁* where the amplitude is admissible.
    pub fn amplitude_sweep(map: &ReducedMap<T>, params: &DynamicEsParams<T>, amplitudes: &[T]) -> Vec<AmplitudeRow> {
        amplitudes
            .iter()
            .map(|&a| {
                let analysis = AverageSystem::new(map.clone(), params.with_amplitude(a))
                    .and_then(|sys| sys.solve_equilibrium().and_then(|eq| Ok((sys.j21(&eq)?, sys))));
                match analysis {
                    Ok((j21, sys)) => AmplitudeRow {
                        amplitude: a.as_f64(),
                        j21: Some(j21.as_f64()),
                        admissible: j21 < T::zero(),
                        epsilon_star: sys.threshold_for(j21).ok().map(|t| t.epsilon_star.as_f64()),
                    },
                    Err(_) => AmplitudeRow {
                        amplitude: a.as_f64(),
                        j21: None,
                        admissible: false,
                        epsilon_star: None,
                    },
                }
            })
            .collect()
    }

    /// E[sin²] for this probe, used by the small-amplitude approximations.
    pub fn probe_power(&self) -> T {
        gaussian_sine_moment(self.params.probe_sigma, 2).expect("probe sigma validated")
    }
}

/// {1 − εw₂, 1 + Π₁, 1 + Π₂} with Π₁,₂ = ε(−w₁ ± √(w₁² + 4ϱJ₂₁))/2, from the
/// factorisation (λ − 1 + εw₂)((λ − 1)² + εw₁(λ − 1) − ε²ϱJ₂₁).
pub fn eigenvalues_closed_form<T: Scalar>(params: &DynamicEsParams<T>, j21: T) -> [Complex<T>; 3] {
    let eps = params.epsilon;
    let two = T::of(2.0);
    let disc = params.w1 * params.w1 + T::of(4.0) * params.gain * j21;
    let (pi1, pi2) = if disc >= T::zero() {
        let r = disc.sqrt();
        (
            Complex::new(eps * (-params.w1 + r) / two, T::zero()),
            Complex::new(eps * (-params.w1 - r) / two, T::zero()),
        )
    } else {
        let r = (-disc).sqrt();
        (
            Complex::new(-eps * params.w1 / two, eps * r / two),
            Complex::new(-eps * params.w1 / two, -eps * r / two),
        )
    };
    let one = Complex::new(T::one(), T::zero());
    [
        Complex::new(T::one() - eps * params.w2, T::zero()),
        one + pi1,
        one + pi2,
    ]
}

/// Coefficients [1, c₂, c₁, c₀] of det(λI − J).
pub fn characteristic_polynomial<T: Scalar>(j: &[[T; 3]; 3]) -> [T; 4] {
    let trace = j[0][0] + j[1][1] + j[2][2];
    let minors = j[0][0] * j[1][1] - j[0][1] * j[1][0] + j[0][0] * j[2][2] - j[0][2] * j[2][0] + j[1][1] * j[2][2]
        - j[1][2] * j[2][1];
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    [T::one(), -trace, minors, -det]
}

/// Eigenvalues of a 3×3 matrix as roots of its characteristic cubic.
pub fn eigenvalue_oracle<T: Scalar>(j: &[[T; 3]; 3]) -> [Complex<T>; 3] {
    cubic_roots(characteristic_polynomial(j))
}

pub fn spectral_radius<T: Scalar>(eigenvalues: &[Complex<T>]) -> T {
    eigenvalues.iter().map(|z| z.norm()).fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::es_dynamic::tests::params;

    fn quadratic() -> ReducedMap<f64> {
        ReducedMap::polynomial(vec![0.0, 0.0, -1.0]).unwrap()
    }

    fn cubic() -> ReducedMap<f64> {
        ReducedMap::polynomial(vec![0.0, 0.0, -1.0, 0.1]).unwrap()
    }

    #[test]
    fn sine_integral_of_pure_quadratic() {
        // ς(z) = z²: ∫(θ + a sin y)² sin y dμ = 2θa·E sin² (odd moments vanish).
        let map = ReducedMap::polynomial(vec![0.0, 0.0, 1.0]).unwrap();
        let p = DynamicEsParams {
            amplitude: 0.3,
            ..params()
        };
        let sys = AverageSystem::new(map, p).unwrap();
        let m2 = gaussian_sine_moment(1.0, 2).unwrap();
        for theta in [-1.0, 0.0, 0.4] {
            let v = sys.sine_integral(theta).unwrap();
            assert!((v - 2.0 * theta * 0.3 * m2).abs() < 1e-12);
        }
        assert!(sys.sine_integral(0.0).unwrap().abs() < 1e-16);
    }

    #[test]
    fn symmetric_map_has_equilibrium_at_zero() {
        let a = 0.2;
        let sys = AverageSystem::new(
            quadratic(),
            DynamicEsParams {
                amplitude: a,
                ..params()
            },
        )
        .unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        assert_eq!(eq.theta, 0.0);
        assert_eq!(eq.xi, 0.0);
        let m2 = gaussian_sine_moment(1.0, 2).unwrap();
        assert!((eq.zeta + a * a * m2).abs() < 1e-14);
        let asym = sys.asymptotic_equilibrium().unwrap();
        assert!((asym.zeta - eq.zeta).abs() < 1e-14);
        assert_eq!(asym.b2, 0.0);
    }

    #[test]
    fn b2_closed_form_value() {
        // ς''(0) = -2, ς'''(0) = 0.6, σ = 1. Frozen from the closed form (python).
        let sys = AverageSystem::new(cubic(), params()).unwrap();
        let asym = sys.asymptotic_equilibrium().unwrap();
        assert_eq!(asym.b1, 0.0);
        assert!((asym.b2 - 0.03554837907122483).abs() < 1e-15);
    }

    #[test]
    fn newton_equilibrium_matches_bisection_oracle() {
        // Frozen scipy brentq roots of the same quadrature equation.
        for (a, expected) in [
            (0.04, 5.6877891778145074e-05),
            (0.02, 1.421938195711308e-05),
            (0.01, 3.554839802654793e-06),
        ] {
            let sys = AverageSystem::new(
                cubic(),
                DynamicEsParams {
                    amplitude: a,
                    ..params()
                },
            )
            .unwrap();
            let eq = sys.solve_equilibrium().unwrap();
            assert!((eq.theta - expected).abs() < 1e-9 * a * a, "a={a}: {}", eq.theta);
            assert!(eq.residual < 1e-10);
            let f = sys.rhs(&eq.state()).unwrap();
            assert!(f.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn vanishing_amplitude_equilibrium() {
        let sys = AverageSystem::new(
            cubic(),
            DynamicEsParams {
                amplitude: 1e-6,
                ..params()
            },
        )
        .unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        assert!(eq.theta.abs() < 1e-12 && eq.zeta.abs() < 1e-11);
    }

    #[test]
    fn jacobian_structure() {
        let sys = AverageSystem::new(cubic(), params()).unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        let j = sys.jacobian(&eq).unwrap();
        assert_eq!(j[0][2], 0.0);
        assert_eq!(j[2][1], 0.0);
        assert_eq!(j[0][0], 1.0);
        let frozen = AverageSystem::new(cubic(), params().with_epsilon(0.0)).unwrap();
        let j0 = frozen.jacobian(&eq).unwrap();
        for (i, row) in j0.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn j21_leading_order() {
        let a = 0.01;
        let sys = AverageSystem::new(
            cubic(),
            DynamicEsParams {
                amplitude: a,
                ..params()
            },
        )
        .unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        let integral = sys.sine_slope_integral(eq.theta).unwrap();
        let leading = a * -2.0 * sys.probe_power();
        assert!((integral - leading).abs() < 0.05 * a * leading.abs());
    }

    #[test]
    fn collapsed_factor_when_j21_vanishes() {
        let p = params();
        let e = eigenvalues_closed_form(&p, 0.0);
        assert!((e[0].re - (1.0 - p.epsilon * p.w2)).abs() < 1e-15);
        assert_eq!(e[1].re, 1.0);
        assert!((e[2].re - (1.0 - p.epsilon * p.w1)).abs() < 1e-15);
        let sys = AverageSystem::new(cubic(), p).unwrap();
        assert!(matches!(sys.threshold_for(0.0), Err(Error::Unstable(_))));
    }

    #[test]
    fn closed_form_matches_cubic_oracle() {
        let sys = AverageSystem::new(
            cubic(),
            DynamicEsParams {
                amplitude: 0.3,
                epsilon: 0.4,
                ..params()
            },
        )
        .unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        let j = sys.jacobian(&eq).unwrap();
        let mut closed = eigenvalues_closed_form(sys.params(), sys.j21(&eq).unwrap()).to_vec();
        closed.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let oracle = eigenvalue_oracle(&j);
        for (c, o) in closed.iter().zip(&oracle) {
            assert!((c - o).norm() < 1e-8, "{c} vs {o}");
        }
    }

    #[test]
    fn threshold_for_quadratic_map() {
        // ς = -z², ϱ = w₁ = w₂ = 1, σ = 1, a = 0.05: brute-force grid oracle.
        let p = DynamicEsParams {
            amplitude: 0.05,
            ..params()
        };
        let sys = AverageSystem::new(quadratic(), p).unwrap();
        let t = sys.stability_threshold().unwrap();
        let mut last_stable = 0.0;
        for i in 1..=400_000 {
            let eps = i as f64 * 1e-5;
            let eq = sys.solve_equilibrium().unwrap();
            let j21 = sys.j21(&eq).unwrap();
            if spectral_radius(&eigenvalues_closed_form(&p.with_epsilon(eps), j21)) < 1.0 {
                last_stable = eps;
            } else {
                break;
            }
        }
        assert!(
            (t.epsilon_star - last_stable).abs() < 1e-4,
            "{} vs {last_stable}",
            t.epsilon_star
        );
        assert!(t.epsilon_star <= 2.0 / p.w2);
        assert!(t.verified.iter().all(|(_, r)| *r < 1.0));
    }

    #[test]
    fn positive_curvature_has_no_stable_step() {
        let map = ReducedMap::polynomial(vec![0.0, 0.0, 1.0]).unwrap();
        let sys = AverageSystem::new(map, params()).unwrap();
        assert!(matches!(sys.stability_threshold(), Err(Error::Unstable(_))));
    }

    #[test]
    fn average_system_rests_at_equilibrium() {
        let sys = AverageSystem::new(quadratic(), params()).unwrap();
        let eq = sys.solve_equilibrium().unwrap();
        let traj = sys.iterate(eq.state(), 1000).unwrap();
        for s in traj.states() {
            assert!(crate::distance(s, &eq.state().to_array()) < 1e-10);
        }
    }

    #[test]
    fn amplitude_sweep_reports_thresholds() {
        let rows = AverageSystem::amplitude_sweep(&cubic(), &params(), &[0.01, 0.1, 0.5]);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.admissible && r.epsilon_star.is_some()));
    }
}
