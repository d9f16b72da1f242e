//! Stochastic extremum seeking on a quadratic static map
//! φ(x) = φ* + (φ''/2)(x − x*)² observed through bounded measurement noise.
//!
//! The estimate is updated by x̂_{k+1} = x̂_k − ε sin(v_{k+1}) y_{k+1} with
//! y_{k+1} = φ(x̂_k + a sin(v_{k+1})) + W_{k+1} and i.i.d. N(0, σ²) probes v.

use serde::{Deserialize, Serialize};

use crate::averaging::{AverageField, SystemModel};
use crate::error::{invalid, Error, Result};
use crate::metrics::{replicate, AveragingExperiment};
use crate::numerics::is_blown_up;
use crate::processes::{JointStream, ProcessSpec, Sampler};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticMap<T> {
    /// φ*
    pub optimum_value: T,
    /// φ''; positive means the optimizer is a minimum.
    pub curvature: T,
    /// x*
    pub optimizer: T,
}

impl<T: Scalar> StaticMap<T> {
    pub fn new(optimum_value: T, curvature: T, optimizer: T) -> Result<Self> {
        let map = Self {
            optimum_value,
            curvature,
            optimizer,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.curvature == T::zero() || !self.curvature.is_finite() {
            return Err(invalid("curvature", "must be nonzero and finite"));
        }
        if !self.optimum_value.is_finite() || !self.optimizer.is_finite() {
            return Err(invalid("static map", "parameters must be finite"));
        }
        Ok(())
    }

    pub fn value(&self, x: T) -> T {
        let d = x - self.optimizer;
        self.optimum_value + self.curvature / T::of(2.0) * d * d
    }
}

/// Measurement noise N(0, σ₁²) clamped to [−bound, bound].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec<T> {
    pub sigma: T,
    pub bound: T,
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn process(&self) -> ProcessSpec {
        ProcessSpec::TruncatedGaussian {
            sigma: self.sigma.as_f64(),
            bound: self.bound.as_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsStaticParams<T> {
    /// a
    pub amplitude: T,
    pub epsilon: T,
    /// σ of the probe v_k ~ N(0, σ²)
    pub probe_sigma: T,
    pub noise: Option<NoiseSpec<T>>,
    /// x̂_0
    pub initial_estimate: T,
}

impl<T: Scalar> EsStaticParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("epsilon", self.epsilon),
            ("probe_sigma", self.probe_sigma),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(invalid(name, "must be positive and finite"));
            }
        }
        if let Some(noise) = &self.noise {
            noise.process().validate()?;
        }
        if !self.initial_estimate.is_finite() {
            return Err(invalid("initial_estimate", "must be finite"));
        }
        Ok(())
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

    pub fn noise_bound(&self) -> T {
        self.noise.map_or(T::zero(), |n| n.bound)
    }
}

/// y_{k+1} = φ(x̂_k + a sin v_{k+1}) + W_{k+1}.
pub fn measured_output<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>, x_hat: T, v: T, w: T) -> T {
    map.value(x_hat + params.amplitude * v.sin()) + w
}

/// One update of the estimate x̂.
pub fn es_static_step<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>, x_hat: T, v: T, w: T) -> T {
    let y = measured_output(map, params, x_hat, v, w);
    x_hat - params.epsilon * v.sin() * y
}

/// One update of the estimation error x̃ = x̂ − x*.
pub fn error_system_step<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>, x_tilde: T, v: T, w: T) -> T {
    let s = v.sin();
    let probe = x_tilde + params.amplitude * s;
    x_tilde - params.epsilon * s * (map.optimum_value + map.curvature / T::of(2.0) * probe * probe + w)
}

/// a φ'' (1 − e^{−2σ²}) / 2: the linear gain of the averaged error field.
pub fn average_gain<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>) -> T {
    let s2 = params.probe_sigma * params.probe_sigma;
    params.amplitude * map.curvature * (T::one() - (T::of(-2.0) * s2).exp()) / T::of(2.0)
}

/// One-step multiplier 1 − ε a φ'' (1 − e^{−2σ²}) / 2 of the average error system.
pub fn average_error_factor<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>) -> T {
    T::one() - params.epsilon * average_gain(map, params)
}

/// ε* = 2 / (a φ'' (1 − e^{−2σ²})); the average error system contracts for ε < ε*.
pub fn epsilon_star<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>) -> Result<T> {
    if !(map.curvature > T::zero()) {
        return Err(invalid("curvature", "ε* is defined for φ'' > 0"));
    }
    Ok(T::one() / average_gain(map, params))
}

/// The error iteration as a generic [`SystemModel`] with perturbation (v, W).
pub fn error_system_model<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>) -> Result<SystemModel<T>> {
    map.validate()?;
    params.validate()?;
    let (map, params) = (*map, *params);
    let noise_dim = params.perturbation().len();
    SystemModel::new(1, noise_dim, params.epsilon, move |x: &[T], y: &[T], out: &mut [T]| {
        let s = y[0].sin();
        let w = y.get(1).copied().unwrap_or_else(T::zero);
        let probe = x[0] + params.amplitude * s;
        out[0] = -s * (map.optimum_value + map.curvature / T::of(2.0) * probe * probe + w);
    })
}

/// f̄(x̃) = −(a φ'' (1 − e^{−2σ²}) / 2) x̃.
pub fn average_error_field<T: Scalar>(map: &StaticMap<T>, params: &EsStaticParams<T>) -> AverageField<T> {
    let gain = average_gain(map, params);
    AverageField::closed_form(1, move |x: &[T], out: &mut [T]| out[0] = -gain * x[0])
}

/// Error system vs. its closed-form average, started at x̂_0 − x*.
pub fn error_experiment<T: Scalar>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    master_seed: u64,
) -> Result<AveragingExperiment<T>> {
    Ok(AveragingExperiment {
        model: error_system_model(map, params)?,
        average: average_error_field(map, params),
        perturbation: params.perturbation(),
        x0: vec![params.initial_estimate - map.optimizer],
        master_seed,
    })
}

/// Band |x̂ − x*| ≤ half_width checked over steps from..=to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCheck<T> {
    pub half_width: T,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticSummary {
    pub final_estimate: f64,
    pub final_error: f64,
    /// First k with |x̂_k − x*| ≤ half_width.
    pub first_entry_to_band: Option<usize>,
    /// Last k with |x̂_k − x*| > half_width.
    pub last_exit_from_band: Option<usize>,
    pub stays_in_band: bool,
    /// max |y_{k+1} − φ(x*)| over the band window.
    pub tail_output_gap: f64,
    /// a² |φ''| / 2, the probing contribution to the output gap.
    pub probe_term: f64,
    /// M, the noise contribution to the output gap.
    pub noise_bound: f64,
    pub average_factor: f64,
    pub average_stable: bool,
}

/// One simulated run: x̂_0..x̂_K and y_1..y_K.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticRun<T> {
    pub estimates: Vec<T>,
    pub outputs: Vec<T>,
    pub summary: StaticSummary,
}

/// Simulates `steps` updates driven by a caller-supplied (v, W) sampler.
pub fn simulate_static<T: Scalar, S: Sampler + ?Sized>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    perturbation: &mut S,
    steps: usize,
    band: &BandCheck<T>,
) -> Result<StaticRun<T>> {
    map.validate()?;
    params.validate()?;
    if perturbation.dim() == 0 || perturbation.dim() > 2 {
        return Err(invalid("perturbation", "expected (v) or (v, W)"));
    }
    let mut raw = vec![0.0; perturbation.dim()];
    let mut estimates = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps);
    estimates.push(params.initial_estimate);
    let mut x_hat = params.initial_estimate;
    for k in 0..steps {
        perturbation.sample_into(&mut raw);
        let v = T::of(raw[0]);
        let w = raw.get(1).map_or(T::zero(), |&w| T::of(w));
        let y = measured_output(map, params, x_hat, v, w);
        x_hat = x_hat - params.epsilon * v.sin() * y;
        if is_blown_up(&[x_hat]) {
            return Err(Error::BlowUp { index: k + 1 });
        }
        outputs.push(y);
        estimates.push(x_hat);
    }
    let summary = summarize(map, params, &estimates, &outputs, band);
    Ok(StaticRun {
        estimates,
        outputs,
        summary,
    })
}

fn summarize<T: Scalar>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    estimates: &[T],
    outputs: &[T],
    band: &BandCheck<T>,
) -> StaticSummary {
    let err = |x: T| (x - map.optimizer).abs();
    let inside = |x: T| err(x) <= band.half_width;
    let last = *estimates.last().expect("at least x̂_0");
    let to = band.to.min(estimates.len() - 1);
    let from = band.from.min(to);
    // y_{k+1} pairs with x̂_k, stored at outputs[k].
    let tail_output_gap = outputs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k >= from && *k <= to)
        .map(|(_, &y)| (y - map.optimum_value).abs().as_f64())
        .fold(0.0, f64::max);
    let factor = average_error_factor(map, params);
    StaticSummary {
        final_estimate: last.as_f64(),
        final_error: (last - map.optimizer).as_f64(),
        first_entry_to_band: estimates.iter().position(|&x| inside(x)),
        last_exit_from_band: estimates.iter().rposition(|&x| !inside(x)),
        stays_in_band: estimates[from..=to].iter().all(|&x| inside(x)),
        tail_output_gap,
        probe_term: (params.amplitude * params.amplitude * map.curvature.abs() / T::of(2.0)).as_f64(),
        noise_bound: params.noise_bound().as_f64(),
        average_factor: factor.as_f64(),
        average_stable: factor.abs() < T::one(),
    }
}

/// Runs replication `replication` of the experiment keyed by `master_seed`.
pub fn run_static_replication<T: Scalar>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    steps: usize,
    master_seed: u64,
    replication: u64,
    band: &BandCheck<T>,
) -> Result<StaticRun<T>> {
    params.validate()?;
    let mut stream = JointStream::new(&params.perturbation(), master_seed, replication)?;
    simulate_static(map, params, &mut stream, steps, band)
}

/// Single run with the default band: ±0.25 around x* over the second half.
pub fn run_static_experiment<T: Scalar>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    steps: usize,
    seed: u64,
) -> Result<StaticRun<T>> {
    if steps == 0 {
        return Err(invalid("steps", "need at least one step"));
    }
    let band = BandCheck {
        half_width: T::of(0.25),
        from: steps / 2,
        to: steps,
    };
    run_static_replication(map, params, steps, seed, 0, &band)
}

/// Fraction of replications whose estimate stays in the band over its window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStudy {
    pub replications: usize,
    pub in_band: usize,
    pub fraction: f64,
    pub blowups: Vec<u64>,
    pub summaries: Vec<Option<StaticSummary>>,
}

pub fn band_study<T: Scalar>(
    map: &StaticMap<T>,
    params: &EsStaticParams<T>,
    steps: usize,
    master_seed: u64,
    replications: usize,
    band: &BandCheck<T>,
) -> Result<BandStudy> {
    if replications == 0 {
        return Err(invalid("replications", "need at least 1"));
    }
    let runs = replicate(replications, |r| {
        run_static_replication(map, params, steps, master_seed, r, band).map(|run| run.summary)
    });
    let mut summaries = Vec::with_capacity(replications);
    let mut blowups = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(s) => summaries.push(Some(s)),
            Err(Error::BlowUp { .. }) => {
                blowups.push(r as u64);
                summaries.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let in_band = summaries.iter().flatten().filter(|s| s.stays_in_band).count();
    Ok(BandStudy {
        replications,
        in_band,
        fraction: in_band as f64 / replications as f64,
        blowups,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::ReplaySampler;

    fn band_setup() -> (StaticMap<f64>, EsStaticParams<f64>) {
        (
            StaticMap::new(1.0, 1.0, 1.0).unwrap(),
            EsStaticParams {
                amplitude: 0.8,
                epsilon: 0.002,
                probe_sigma: 2.0,
                noise: Some(NoiseSpec { sigma: 0.2, bound: 1.0 }),
                initial_estimate: 5.0,
            },
        )
    }

    #[test]
    fn zero_probe_leaves_estimate() {
        let (map, params) = band_setup();
        assert_eq!(es_static_step(&map, &params, 3.7, 0.0, 0.4), 3.7);
    }

    #[test]
    fn hand_step() {
        let (map, params) = band_setup();
        let v = std::f64::consts::FRAC_PI_2;
        let y = measured_output(&map, &params, 1.0, v, 0.0);
        assert!((y - 1.32).abs() < 1e-15);
        let next = es_static_step(&map, &params, 1.0, v, 0.0);
        assert!((next - 0.99736).abs() < 1e-15);
    }

    #[test]
    fn error_step_fixed_point() {
        let map = StaticMap::new(0.0, 2.0, 0.5).unwrap();
        let (_, params) = band_setup();
        let v = 0.7_f64;
        let x_tilde = -params.amplitude * v.sin();
        assert_eq!(error_system_step(&map, &params, x_tilde, v, 0.0), x_tilde);
    }

    #[test]
    fn factor_and_threshold() {
        let (map, params) = band_setup();
        assert!((average_error_factor(&map, &params) - 0.9992002683701023).abs() < 1e-15);
        let star = epsilon_star(&map, &params).unwrap();
        assert!((star - 2.500838938002103).abs() < 1e-12);
        let half = EsStaticParams {
            epsilon: star / 2.0,
            ..params
        };
        assert!((average_error_factor(&map, &half) - 0.5).abs() < 1e-15);
        let concave = StaticMap::new(1.0, -1.0, 1.0).unwrap();
        assert!(epsilon_star(&concave, &params).is_err());
        let tiny = EsStaticParams {
            probe_sigma: 1e-9,
            ..params
        };
        assert!((average_error_factor(&map, &tiny) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frozen_probe_keeps_estimate_constant() {
        let (map, mut params) = band_setup();
        params.noise = None;
        let mut probe = ReplaySampler::constant(vec![std::f64::consts::PI * 0.0]);
        let band = BandCheck {
            half_width: 0.25,
            from: 0,
            to: 10,
        };
        let run = simulate_static(&map, &params, &mut probe, 100, &band).unwrap();
        assert!(run.estimates.iter().all(|&x| x == 5.0));
    }

    #[test]
    fn unstable_step_size_is_flagged() {
        let (map, params) = band_setup();
        let big = EsStaticParams {
            epsilon: 6.0,
            initial_estimate: 50.0,
            ..params
        };
        let factor = average_error_factor(&map, &big);
        assert!(factor.abs() > 1.0);
        let mut probe = ReplaySampler::constant(vec![0.0, 0.0]);
        let band = BandCheck {
            half_width: 0.25,
            from: 0,
            to: 1,
        };
        let run = simulate_static(&map, &big, &mut probe, 1, &band).unwrap();
        assert!(!run.summary.average_stable);
    }

    #[test]
    fn invalid_params() {
        assert!(StaticMap::new(0.0, 0.0, 0.0).is_err());
        let (_, params) = band_setup();
        assert!(EsStaticParams {
            amplitude: 0.0,
            ..params
        }
        .validate()
        .is_err());
        assert!(EsStaticParams {
            probe_sigma: -1.0,
            ..params
        }
        .validate()
        .is_err());
    }
}
