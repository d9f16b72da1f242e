//! Measurable forms of the approximation and weak-stability statements:
//! sup-deviations, first-exit times, exceedance probabilities, exponential
//! envelopes and the averaging residual.
//!
//! Limits in ε have no rates attached, so they are checked as monotone trends
//! over ε sweeps under a fixed master seed. Replications run in parallel; each
//! owns its sub-streams and results are collected in replication order, so
//! every report is independent of the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{iterate_discrete_average, iterate_original, AverageField, SystemModel, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::processes::{JointStream, ProcessSpec, Sampler};
use crate::stats::{median, proportion};
use crate::{distance, norm, Scalar};

/// First index at which a condition is strictly violated, or `Never` within
/// the simulated horizon. `Never` orders after every index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ExitTime {
    At(usize),
    Never,
}

impl ExitTime {
    pub fn index(self) -> Option<usize> {
        match self {
            Self::At(k) => Some(k),
            Self::Never => None,
        }
    }
}

/// Exponential envelope |X_k − center| ≤ c·|X_0 − center|·γ^k + δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeSpec<T> {
    pub c: T,
    pub gamma: T,
    pub delta: T,
    /// Initial conditions must satisfy |X_0| < radius.
    pub radius: T,
}

impl<T: Scalar> EnvelopeSpec<T> {
    pub fn new(c: T, gamma: T, delta: T, radius: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return Err(invalid("c", "must be nonnegative"));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(invalid("gamma", "must lie strictly inside (0, 1)"));
        }
        if !(delta >= T::zero()) {
            return Err(invalid("delta", "must be nonnegative"));
        }
        if !(radius > T::zero()) {
            return Err(invalid("radius", "must be positive"));
        }
        Ok(Self {
            c,
            gamma,
            delta,
            radius,
        })
    }

    pub fn bound(&self, initial_norm: T, k: usize) -> T {
        self.c * initial_norm * self.gamma.powi(k as i32) + self.delta
    }
}

fn comparable<T: Scalar>(a: &Trajectory<T>, b: &Trajectory<T>, steps: usize) -> Result<()> {
    if a.epsilon() != b.epsilon() {
        return Err(Error::Incomparable(format!(
            "step sizes differ ({} vs {})",
            a.epsilon(),
            b.epsilon()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.len() < steps + 1 || b.len() < steps + 1 {
        return Err(Error::Incomparable(format!(
            "need {} states, have {} and {}",
            steps + 1,
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// |X_k − X̄_k| for k = 0..=steps.
pub fn deviation_series<T: Scalar>(a: &Trajectory<T>, b: &Trajectory<T>, steps: usize) -> Result<Vec<T>> {
    comparable(a, b, steps)?;
    Ok((0..=steps).map(|k| distance(a.state(k), b.state(k))).collect())
}

/// max_{0≤k≤steps} |X_k − X̄_k| in the Euclidean norm.
pub fn sup_deviation<T: Scalar>(a: &Trajectory<T>, b: &Trajectory<T>, steps: usize) -> Result<T> {
    Ok(deviation_series(a, b, steps)?
        .into_iter()
        .fold(T::zero(), |m, d| if d > m || d.is_nan() { d } else { m }))
}

/// Smallest k with deviations[k] > δ.
pub fn first_exit_from_deviations<T: Scalar>(deviations: &[T], delta: T) -> ExitTime {
    deviations
        .iter()
        .position(|&d| !(d <= delta))
        .map_or(ExitTime::Never, ExitTime::At)
}

/// Smallest k with |X_k − X̄_k| > δ over the common length of both paths.
pub fn first_exit_deviation<T: Scalar>(a: &Trajectory<T>, b: &Trajectory<T>, delta: T) -> Result<ExitTime> {
    if !(delta > T::zero()) {
        return Err(invalid("delta", "must be positive"));
    }
    let steps = a.len().min(b.len()) - 1;
    Ok(first_exit_from_deviations(&deviation_series(a, b, steps)?, delta))
}

/// Smallest k with |X_k − center| > c·|X_0 − center|·γ^k + δ.
pub fn first_exit_envelope<T: Scalar>(traj: &Trajectory<T>, center: &[T], envelope: &EnvelopeSpec<T>) -> ExitTime {
    let initial = distance(traj.state(0), center);
    traj.states()
        .enumerate()
        .position(|(k, x)| !(distance(x, center) <= envelope.bound(initial, k)))
        .map_or(ExitTime::Never, ExitTime::At)
}

/// Runs `f(replication)` for replications 0..count in parallel, in order.
pub fn replicate<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Original system, its average, the noise driving it, and the initial state.
#[derive(Debug, Clone)]
pub struct AveragingExperiment<T> {
    pub model: SystemModel<T>,
    pub average: AverageField<T>,
    pub perturbation: Vec<ProcessSpec>,
    pub x0: Vec<T>,
    pub master_seed: u64,
}

impl<T: Scalar> AveragingExperiment<T> {
    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Ok(Self {
            model: self.model.with_epsilon(epsilon)?,
            ..self.clone()
        })
    }

    pub fn stream(&self, replication: u64) -> Result<JointStream> {
        JointStream::new(&self.perturbation, self.master_seed, replication)
    }

    pub fn original(&self, replication: u64, steps: usize) -> Result<Trajectory<T>> {
        let mut stream = self.stream(replication)?;
        iterate_original(&self.model, &mut stream, &self.x0, steps)
    }

    pub fn average_path(&self, steps: usize) -> Result<Trajectory<T>> {
        iterate_discrete_average(&self.average, self.model.epsilon(), &self.x0, steps)
    }
}

/// floor(N / ε), tolerant of ε values that are not exact binary fractions.
pub fn horizon_steps<T: Scalar>(horizon: T, epsilon: T) -> usize {
    let q = (horizon / epsilon).as_f64();
    (q * (1.0 + 1e-12)).floor() as usize
}

/// Sup-deviations of one ε across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub epsilon: f64,
    pub horizon_steps: usize,
    /// Max of `per_seed`.
    pub sup_deviation: f64,
    pub median: f64,
    /// Blown-up replications are recorded as +∞ (JSON null).
    pub per_seed: Vec<f64>,
    pub seeds: Vec<u64>,
    pub blowups: Vec<u64>,
}

impl DeviationReport {
    fn from_values(epsilon: f64, horizon_steps: usize, values: Vec<Result<f64>>) -> Result<Self> {
        let mut per_seed = Vec::with_capacity(values.len());
        let mut blowups = Vec::new();
        for (r, v) in values.into_iter().enumerate() {
            match v {
                Ok(d) => per_seed.push(d),
                Err(Error::BlowUp { .. }) => {
                    per_seed.push(f64::INFINITY);
                    blowups.push(r as u64);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            epsilon,
            horizon_steps,
            sup_deviation: per_seed.iter().copied().fold(0.0, f64::max),
            median: median(&per_seed),
            seeds: (0..per_seed.len() as u64).collect(),
            per_seed,
            blowups,
        })
    }
}

/// Sup-deviation between original and discrete average over `steps`, per replication.
pub fn deviation_report<T: Scalar>(
    experiment: &AveragingExperiment<T>,
    steps: usize,
    replications: usize,
) -> Result<DeviationReport> {
    let average = experiment.average_path(steps)?;
    let values = replicate(replications, |r| {
        let original = experiment.original(r, steps)?;
        sup_deviation(&original, &average, steps).map(|d| d.as_f64())
    });
    DeviationReport::from_values(experiment.model.epsilon().as_f64(), steps, values)
}

/// Monte Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceReport {
    pub estimate: f64,
    pub std_error: f64,
    pub replications: usize,
    pub exceedances: usize,
    /// Blown-up replications; each counts as an exceedance.
    pub blowups: Vec<u64>,
}

fn exceedance_from(flags: Vec<Result<bool>>) -> Result<ExceedanceReport> {
    let replications = flags.len();
    let mut exceedances = 0;
    let mut blowups = Vec::new();
    for (r, flag) in flags.into_iter().enumerate() {
        match flag {
            Ok(true) => exceedances += 1,
            Ok(false) => {}
            Err(Error::BlowUp { .. }) => {
                exceedances += 1;
                blowups.push(r as u64);
            }
            Err(e) => return Err(e),
        }
    }
    let (estimate, std_error) = proportion(exceedances, replications);
    Ok(ExceedanceReport {
        estimate,
        std_error,
        replications,
        exceedances,
        blowups,
    })
}

/// Estimates P{ sup_{k≤steps} |X_k − X̄_k| > δ }.
pub fn exceedance_probability<T: Scalar>(
    experiment: &AveragingExperiment<T>,
    delta: T,
    steps: usize,
    replications: usize,
) -> Result<ExceedanceReport> {
    if replications < 2 {
        return Err(invalid("replications", "need at least 2"));
    }
    if !(delta > T::zero()) {
        return Err(invalid("delta", "must be positive"));
    }
    let average = experiment.average_path(steps)?;
    let flags = replicate(replications, |r| {
        let original = experiment.original(r, steps)?;
        Ok(!(sup_deviation(&original, &average, steps)? <= delta))
    });
    exceedance_from(flags)
}

/// Estimates P{ ∃k ≤ steps : |X_k| > c|X_0|γ^k + δ }.
pub fn envelope_exceedance<T: Scalar>(
    experiment: &AveragingExperiment<T>,
    envelope: &EnvelopeSpec<T>,
    steps: usize,
    replications: usize,
) -> Result<ExceedanceReport> {
    if replications < 2 {
        return Err(invalid("replications", "need at least 2"));
    }
    if !(norm(&experiment.x0) < envelope.radius) {
        return Err(invalid("x0", "initial state must lie inside the envelope radius"));
    }
    let origin = vec![T::zero(); experiment.x0.len()];
    let flags = replicate(replications, |r| {
        let original = experiment.original(r, steps)?;
        Ok(first_exit_envelope(&original, &origin, envelope) != ExitTime::Never)
    });
    exceedance_from(flags)
}

/// R_k = ε (f(X_k, Y_{k+1}) − f̄(X_k)) along a stored trajectory.
///
/// `replay` must reproduce the perturbation that generated `traj`. Each step
/// is reconstructed as X_k + ε f̄(X_k) + R_k and compared with X_{k+1}; a gap
/// beyond 1e-12 (relative to the state scale) means the replay does not match.
pub fn compute_residual<T: Scalar, S: Sampler + ?Sized>(
    model: &SystemModel<T>,
    avg: &AverageField<T>,
    traj: &Trajectory<T>,
    replay: &mut S,
) -> Result<Vec<Vec<T>>> {
    if replay.dim() != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.noise_dim(),
            actual: replay.dim(),
        });
    }
    if traj.dim() != model.dim() || avg.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: traj.dim(),
        });
    }
    let n = model.dim();
    let eps = model.epsilon();
    let tol = T::tol(1e-12);
    let mut raw = vec![0.0; model.noise_dim()];
    let mut y = vec![T::zero(); model.noise_dim()];
    let mut f = vec![T::zero(); n];
    let mut fbar = vec![T::zero(); n];
    let mut residuals = Vec::with_capacity(traj.len().saturating_sub(1));
    for k in 0..traj.last_index() {
        replay.sample_into(&mut raw);
        for (slot, &v) in y.iter_mut().zip(&raw) {
            *slot = T::of(v);
        }
        let x = traj.state(k);
        let next = traj.state(k + 1);
        model.eval(x, &y, &mut f);
        avg.eval(x, &mut fbar)?;
        let r: Vec<T> = f.iter().zip(&fbar).map(|(&a, &b)| eps * (a - b)).collect();
        let mut gap = T::zero();
        let mut scale = T::one();
        for i in 0..n {
            let rebuilt = x[i] + eps * fbar[i] + r[i];
            gap = gap.max((next[i] - rebuilt).abs());
            scale = scale.max(x[i].abs()).max((eps * f[i]).abs()).max((eps * fbar[i]).abs());
        }
        if !(gap <= tol * scale) {
            return Err(Error::ResidualMismatch {
                index: k,
                gap: gap.as_f64(),
            });
        }
        residuals.push(r);
    }
    Ok(residuals)
}

/// Median sup-deviation over floor(N/ε) steps for each ε in a descending sweep.
pub fn averaging_rate_study<T: Scalar>(
    experiment: &AveragingExperiment<T>,
    epsilons: &[T],
    horizon: T,
    replications: usize,
) -> Result<Vec<DeviationReport>> {
    if epsilons.is_empty() {
        return Err(invalid("epsilons", "need at least one value"));
    }
    if epsilons.iter().any(|&e| !(e > T::zero())) {
        return Err(invalid("epsilons", "must be positive"));
    }
    if epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(invalid("epsilons", "must be strictly descending"));
    }
    if replications == 0 {
        return Err(invalid("replications", "need at least 1"));
    }
    epsilons
        .iter()
        .map(|&eps| {
            let exp = experiment.with_epsilon(eps)?;
            deviation_report(&exp, horizon_steps(horizon, eps), replications)
        })
        .collect()
}

/// Fits c and γ to a decaying average trajectory about `center`.
///
/// γ comes from a least-squares line through log|X̄_k − center|; c is then the
/// smallest value ≥ 1 for which the trajectory stays inside c|X̄_0|γ^k.
pub fn fit_envelope<T: Scalar>(average: &Trajectory<T>, center: &[T], delta: T, radius: T) -> Result<EnvelopeSpec<T>> {
    let initial = distance(average.state(0), center).as_f64();
    if initial == 0.0 {
        return Err(invalid("average", "initial state coincides with the center"));
    }
    let floor = initial * 1e-12;
    let points: Vec<(f64, f64)> = average
        .states()
        .enumerate()
        .map(|(k, x)| (k as f64, distance(x, center).as_f64()))
        .filter(|&(_, d)| d > floor)
        .map(|(k, d)| (k, d.ln()))
        .collect();
    if points.len() < 2 {
        return Err(invalid("average", "need at least two non-degenerate states to fit"));
    }
    let n = points.len() as f64;
    let mk = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mk).powi(2)).sum();
    let gamma = (sxy / sxx).exp();
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Unstable(format!("fitted decay factor {gamma} is not in (0, 1)")));
    }
    let c = average
        .states()
        .enumerate()
        .map(|(k, x)| distance(x, center).as_f64() / (initial * gamma.powi(k as i32)))
        .fold(1.0, f64::max);
    EnvelopeSpec::new(T::of(c), T::of(gamma), delta, radius)
}
