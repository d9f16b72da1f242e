//! The perturbed iteration X_{k+1} = X_k + ε f(X_k, Y_{k+1}) and its discrete
//! and continuous average systems.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::numerics::{is_blown_up, rk4_integrate};
use crate::processes::{JointStream, ProcessSpec, Sampler};
use crate::stats::batch_means;
use crate::Scalar;

/// f(x, y) written into `out`.
pub type FieldFn<T> = dyn Fn(&[T], &[T], &mut [T]) + Send + Sync;
/// f̄(x) written into `out`.
pub type MeanFieldFn<T> = dyn Fn(&[T], &mut [T]) + Send + Sync;

/// Vector field and step size of the original iteration.
#[derive(Clone)]
pub struct SystemModel<T> {
    dim: usize,
    noise_dim: usize,
    epsilon: T,
    field: Arc<FieldFn<T>>,
}

impl<T: Scalar> SystemModel<T> {
    /// `field(x, y, out)` must write exactly `dim` components.
    pub fn new<F>(dim: usize, noise_dim: usize, epsilon: T, field: F) -> Result<Self>
    where
        F: Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("dim", "state dimension must be at least 1"));
        }
        check_epsilon(epsilon)?;
        Ok(Self {
            dim,
            noise_dim,
            epsilon,
            field: Arc::new(field),
        })
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn eval(&self, x: &[T], y: &[T], out: &mut [T]) {
        (self.field)(x, y, out)
    }
}

impl<T: fmt::Debug> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

fn check_epsilon<T: Scalar>(epsilon: T) -> Result<()> {
    if epsilon > T::zero() && epsilon.is_finite() {
        Ok(())
    } else {
        Err(invalid("epsilon", "must be positive and finite"))
    }
}

/// The averaged field f̄(x) = ∫ f(x, y) μ(dy).
#[derive(Clone)]
pub enum AverageField<T> {
    ClosedForm {
        dim: usize,
        map: Arc<MeanFieldFn<T>>,
    },
    /// Birkhoff average of f(x, ·) along one stream of `samples + 1` draws.
    Empirical {
        model: SystemModel<T>,
        perturbation: Vec<ProcessSpec>,
        seed: u64,
        samples: usize,
    },
}

impl<T: fmt::Debug> fmt::Debug for AverageField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ClosedForm { dim, .. } => write!(f, "AverageField::ClosedForm(dim={dim})"),
            Self::Empirical { seed, samples, .. } => {
                write!(f, "AverageField::Empirical(seed={seed}, samples={samples})")
            }
        }
    }
}

impl<T: Scalar> AverageField<T> {
    pub fn closed_form<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&[T], &mut [T]) + Send + Sync + 'static,
    {
        Self::ClosedForm {
            dim,
            map: Arc::new(map),
        }
    }

    pub fn empirical(model: SystemModel<T>, perturbation: Vec<ProcessSpec>, seed: u64, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        if perturbation.len() != model.noise_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.noise_dim(),
                actual: perturbation.len(),
            });
        }
        Ok(Self::Empirical {
            model,
            perturbation,
            seed,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ClosedForm { dim, .. } => *dim,
            Self::Empirical { model, .. } => model.dim(),
        }
    }

    pub fn eval(&self, x: &[T], out: &mut [T]) -> Result<()> {
        match self {
            Self::ClosedForm { map, .. } => {
                map(x, out);
                Ok(())
            }
            Self::Empirical {
                model,
                perturbation,
                seed,
                samples,
            } => {
                let estimate = estimate_average_field(model, perturbation, *seed, x, *samples)?;
                out.copy_from_slice(&estimate.mean);
                Ok(())
            }
        }
    }
}

/// Indexed states X_0..X_K with spacing ε; the time of row k is ε·k.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    epsilon: T,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// `data` holds the states row by row.
    pub fn from_rows(epsilon: T, dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(invalid("data", "need at least one full state row"));
        }
        Ok(Self { epsilon, dim, data })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (K + 1).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Index of the last state, K.
    pub fn last_index(&self) -> usize {
        self.len() - 1
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[T] {
        self.state(self.last_index())
    }

    /// Scalar view of component `i` along the trajectory.
    pub fn component(&self, i: usize) -> Vec<T> {
        self.states().map(|s| s[i]).collect()
    }

    pub fn time(&self, k: usize) -> T {
        self.epsilon * T::of(k as f64)
    }

    /// m(t) = max{k : ε k ≤ t}.
    pub fn index_at(&self, t: T) -> Result<usize> {
        let end = self.time(self.last_index());
        let slack = T::epsilon() * T::of(16.0) * end.max(T::one());
        if !(t >= T::zero()) || t > end + slack {
            return Err(Error::TimeOutOfRange {
                t: t.as_f64(),
                end: end.as_f64(),
            });
        }
        let q = t / self.epsilon;
        let nearest = q.round();
        let k = if (q - nearest).abs() <= T::epsilon() * T::of(16.0) * q.max(T::one()) {
            nearest
        } else {
            q.floor()
        };
        Ok(k.to_usize().unwrap_or(0).min(self.last_index()))
    }

    /// The piecewise-constant embedding X(t) = X_{m(t)}.
    pub fn embed_time(&self, t: T) -> Result<&[T]> {
        self.index_at(t).map(|k| self.state(k))
    }

    /// Writes `k,t,x_0,...,x_{n-1}` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let names: Vec<String> = (0..self.dim).map(|i| format!("x_{i}")).collect();
        self.write_csv_named(out, &names)
    }

    /// As [`Trajectory::write_csv`] with custom state column names.
    pub fn write_csv_named<W: Write, S: AsRef<str>>(&self, mut out: W, names: &[S]) -> io::Result<()> {
        write!(out, "k,t")?;
        for name in names {
            write!(out, ",{}", name.as_ref())?;
        }
        writeln!(out)?;
        let eps = self.epsilon.as_f64();
        for (k, state) in self.states().enumerate() {
            write!(out, "{k},{}", fmt_f64(eps * k as f64))?;
            for v in state {
                write!(out, ",{}", fmt_f64(v.as_f64()))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Shortest round-trip formatting is not fixed-width; numeric artifacts use
/// 17 significant digits in scientific notation instead.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Runs X_{k+1} = X_k + ε f(X_k, Y_{k+1}) for `steps` steps.
pub fn iterate_original<T: Scalar, S: Sampler + ?Sized>(
    model: &SystemModel<T>,
    perturbation: &mut S,
    x0: &[T],
    steps: usize,
) -> Result<Trajectory<T>> {
    check_dim(model.dim(), x0.len())?;
    check_dim(model.noise_dim(), perturbation.dim())?;
    let n = model.dim();
    let eps = model.epsilon();
    let mut data = Vec::with_capacity((steps + 1) * n);
    data.extend_from_slice(x0);
    let mut raw = vec![0.0; model.noise_dim()];
    let mut y = vec![T::zero(); model.noise_dim()];
    let mut f = vec![T::zero(); n];
    for k in 0..steps {
        perturbation.sample_into(&mut raw);
        for (slot, &v) in y.iter_mut().zip(&raw) {
            *slot = T::of(v);
        }
        let start = k * n;
        model.eval(&data[start..start + n], &y, &mut f);
        for i in 0..n {
            let next = data[start + i] + eps * f[i];
            data.push(next);
        }
        if is_blown_up(&data[start + n..]) {
            return Err(Error::BlowUp { index: k + 1 });
        }
    }
    Ok(Trajectory {
        epsilon: eps,
        dim: n,
        data,
    })
}

/// Runs X̄_{k+1} = X̄_k + ε f̄(X̄_k).
pub fn iterate_discrete_average<T: Scalar>(
    avg: &AverageField<T>,
    epsilon: T,
    x0: &[T],
    steps: usize,
) -> Result<Trajectory<T>> {
    check_epsilon(epsilon)?;
    check_dim(avg.dim(), x0.len())?;
    let n = avg.dim();
    let mut data = Vec::with_capacity((steps + 1) * n);
    data.extend_from_slice(x0);
    let mut f = vec![T::zero(); n];
    for k in 0..steps {
        let start = k * n;
        avg.eval(&data[start..start + n], &mut f)?;
        for i in 0..n {
            let next = data[start + i] + epsilon * f[i];
            data.push(next);
        }
        if is_blown_up(&data[start + n..]) {
            return Err(Error::BlowUp { index: k + 1 });
        }
    }
    Ok(Trajectory { epsilon, dim: n, data })
}

/// Integrates dX/dt = f̄(X) with classical RK4 on [0, horizon].
///
/// Uses round(horizon / step) uniform steps so the grid ends exactly at the
/// horizon; the returned trajectory's spacing is that effective step.
pub fn integrate_continuous_average<T: Scalar>(
    avg: &AverageField<T>,
    x0: &[T],
    horizon: T,
    step: T,
) -> Result<Trajectory<T>> {
    if !(step > T::zero()) || !step.is_finite() {
        return Err(invalid("step", "must be positive and finite"));
    }
    if !(horizon >= T::zero()) || !horizon.is_finite() {
        return Err(invalid("horizon", "must be nonnegative and finite"));
    }
    check_dim(avg.dim(), x0.len())?;
    let steps = (horizon / step).round().to_usize().unwrap_or(0);
    if steps == 0 {
        return Trajectory::from_rows(step, x0.len(), x0.to_vec());
    }
    let h = horizon / T::of(steps as f64);
    // Empirical fields cannot fail mid-stage once their specs validated; closed forms never fail.
    let field = |x: &[T], out: &mut [T]| {
        if avg.eval(x, out).is_err() {
            out.fill(T::nan());
        }
    };
    let data = rk4_integrate(&field, x0, h, steps)?;
    Ok(Trajectory {
        epsilon: h,
        dim: x0.len(),
        data,
    })
}

/// Empirical ergodic average and its per-component batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageEstimate<T> {
    pub mean: Vec<T>,
    pub std_error: Vec<f64>,
}

/// (1/(N+1)) Σ_{k=0}^{N} f(x, Y_{k+1}) along one stream seeded by `seed`.
pub fn estimate_average_field<T: Scalar>(
    model: &SystemModel<T>,
    perturbation: &[ProcessSpec],
    seed: u64,
    x: &[T],
    samples: usize,
) -> Result<AverageEstimate<T>> {
    check_dim(model.dim(), x.len())?;
    check_dim(model.noise_dim(), perturbation.len())?;
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let n = model.dim();
    let count = samples + 1;
    let mut stream = JointStream::new(perturbation, seed, 0)?;
    let mut raw = vec![0.0; model.noise_dim()];
    let mut y = vec![T::zero(); model.noise_dim()];
    let mut f = vec![T::zero(); n];
    let mut columns = vec![Vec::with_capacity(count); n];
    for k in 0..count {
        stream.sample_into(&mut raw);
        for (slot, &v) in y.iter_mut().zip(&raw) {
            *slot = T::of(v);
        }
        model.eval(x, &y, &mut f);
        if is_blown_up(&f) {
            return Err(Error::BlowUp { index: k });
        }
        for (col, &v) in columns.iter_mut().zip(&f) {
            col.push(v.as_f64());
        }
    }
    let batches = (count / 1000).clamp(1, 200);
    let (mean, std_error) = columns
        .iter()
        .map(|col| {
            let (m, se) = batch_means(col, batches);
            (T::of(m), se)
        })
        .unzip();
    Ok(AverageEstimate { mean, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::ReplaySampler;

    fn decay_model(eps: f64) -> SystemModel<f64> {
        SystemModel::new(1, 0, eps, |x: &[f64], _: &[f64], out: &mut [f64]| out[0] = -x[0]).unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let model = SystemModel::new(2, 1, 0.1, |_: &[f64], _: &[f64], out: &mut [f64]| out.fill(0.0)).unwrap();
        let mut s = ReplaySampler::constant(vec![0.3]);
        let traj = iterate_original(&model, &mut s, &[1.0, -2.0], 100).unwrap();
        assert_eq!(traj.len(), 101);
        assert!(traj.states().all(|x| x == [1.0, -2.0]));
    }

    #[test]
    fn one_step_by_hand() {
        let mut s = ReplaySampler::constant(vec![]);
        let traj = iterate_original(&decay_model(0.1), &mut s, &[1.0], 1).unwrap();
        assert_eq!(traj.component(0), vec![1.0, 0.9]);
    }

    #[test]
    fn geometric_discrete_average() {
        let avg = AverageField::closed_form(1, |x: &[f64], out: &mut [f64]| out[0] = -2.0 * x[0]);
        let traj = iterate_discrete_average(&avg, 0.01, &[3.0], 200).unwrap();
        for (k, x) in traj.states().enumerate() {
            assert!((x[0] - 0.98f64.powi(k as i32) * 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blow_up_reports_first_index() {
        let model = SystemModel::new(1, 0, 1.0, |x: &[f64], _: &[f64], out: &mut [f64]| out[0] = 9.0 * x[0]).unwrap();
        let mut s = ReplaySampler::constant(vec![]);
        // 10^k exceeds 1e12 first at k = 13.
        let err = iterate_original(&model, &mut s, &[1.0], 50).unwrap_err();
        assert_eq!(err, Error::BlowUp { index: 13 });
    }

    #[test]
    fn time_embedding() {
        let traj = Trajectory::from_rows(0.5, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(traj.embed_time(0.0).unwrap(), [0.0]);
        assert_eq!(traj.embed_time(0.75).unwrap(), [1.0]);
        assert_eq!(traj.embed_time(1.5).unwrap(), [3.0]);
        assert!(traj.embed_time(1.6).is_err());
        assert!(traj.embed_time(-0.1).is_err());
        let fine = Trajectory::from_rows(0.1, 1, (0..=30).map(f64::from).collect()).unwrap();
        assert_eq!(fine.index_at(3.0).unwrap(), 30);
        assert_eq!(fine.index_at(0.3).unwrap(), 3);
        assert_eq!(fine.index_at(0.29999).unwrap(), 2);
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory::from_rows(0.5, 2, vec![1.0, 2.0, 0.1, 0.2]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,x_0,x_1");
        assert_eq!(
            lines[2],
            "1,5.0000000000000000e-1,1.0000000000000001e-1,2.0000000000000001e-1"
        );
    }

    #[test]
    fn continuous_average_linear_decay() {
        let avg = AverageField::closed_form(1, |x: &[f64], out: &mut [f64]| out[0] = -x[0]);
        let traj = integrate_continuous_average(&avg, &[1.0], 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        assert!((traj.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn continuous_average_detects_explosion() {
        // x' = x², x(0) = 1 explodes at t = 1.
        let avg = AverageField::closed_form(1, |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        for h in [1e-2, 1e-3, 1e-4] {
            match integrate_continuous_average(&avg, &[1.0], 2.0, h) {
                Err(Error::BlowUp { index }) => {
                    let t = index as f64 * h;
                    assert!(t > 0.9 && t < 1.0 + 20.0 * h, "h={h}: blew up at t={t}");
                }
                other => panic!("expected blow-up, got {other:?}"),
            }
        }
    }

    #[test]
    fn noise_free_average_is_exact() {
        let model = SystemModel::new(2, 1, 0.1, |x: &[f64], _: &[f64], out: &mut [f64]| {
            out[0] = x[1];
            out[1] = -x[0];
        })
        .unwrap();
        let est =
            estimate_average_field(&model, &[ProcessSpec::IidGaussian { sigma: 1.0 }], 3, &[0.5, 2.0], 10).unwrap();
        assert_eq!(est.mean, vec![2.0, -0.5]);
    }
}
