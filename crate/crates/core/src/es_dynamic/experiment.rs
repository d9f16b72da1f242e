use serde::Serialize;

use super::{closed_loop_step, reduced_step, AverageEquilibrium, AverageSystem, ClosedLoopState, Plant, ReducedState};
use crate::averaging::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::metrics::replicate;
use crate::processes::{JointStream, Sampler};
use crate::Scalar;

/// Full closed-loop configuration. `initial` is given in error coordinates:
/// θ̂₀ = θ* + θ̃₀ and ζ₀ = y* + ζ̃₀.
#[derive(Debug, Clone)]
pub struct ClosedLoopSetup<T, P> {
    pub plant: P,
    pub theta_star: T,
    pub peak_output: T,
    pub initial_x: Vec<T>,
    pub initial: ReducedState<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicSummary {
    pub equilibrium_theta: f64,
    pub equilibrium_zeta: f64,
    pub b2: f64,
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub initial_distance: f64,
    pub terminal_distance: f64,
    /// θ̃_K − θ̃^{eq}.
    pub terminal_theta_error: f64,
    /// Mean distance to the equilibrium over the second half of the run.
    pub tail_mean_distance: f64,
    /// Mean of |y⁰ − y*| over the second half, y⁰ being the noise-free output.
    pub tail_output_gap: f64,
    /// a²|ς''(0)|/2.
    pub probe_term: f64,
}

/// Error-coordinate trajectory (θ̃, ξ, ζ̃), followed by the plant state for
/// closed-loop runs.
#[derive(Debug, Clone)]
pub struct DynamicRun<T> {
    pub trajectory: Trajectory<T>,
    pub columns: Vec<String>,
    pub summary: DynamicSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedStudy {
    pub replications: usize,
    pub tolerance: f64,
    pub successes: usize,
    pub fraction: f64,
    pub blowups: Vec<u64>,
    /// |θ̃_K − θ̃^{eq}| per replication, `None` after a blow-up.
    pub terminal_errors: Vec<Option<f64>>,
}

struct Prepared<T> {
    equilibrium: AverageEquilibrium<T>,
    epsilon_star: T,
}

fn prepare<T: Scalar>(system: &AverageSystem<T>) -> Result<Prepared<T>> {
    let equilibrium = system.solve_equilibrium()?;
    let threshold = system.stability_threshold()?;
    let eps = system.params().epsilon;
    if !(eps > T::zero() && eps < threshold.epsilon_star) {
        return Err(invalid(
            "epsilon",
            format!(
                "{eps} is outside (0, {}) where the average system is stable",
                threshold.epsilon_star
            ),
        ));
    }
    Ok(Prepared {
        equilibrium,
        epsilon_star: threshold.epsilon_star,
    })
}

fn draw<T: Scalar>(stream: &mut JointStream, raw: &mut [f64]) -> (T, T) {
    stream.sample_into(raw);
    (T::of(raw[0]), raw.get(1).map_or(T::zero(), |&w| T::of(w)))
}

struct Tracker {
    tail_from: usize,
    distance_sum: f64,
    gap_sum: f64,
    count: usize,
}

impl Tracker {
    fn new(steps: usize) -> Self {
        Self {
            tail_from: steps / 2,
            distance_sum: 0.0,
            gap_sum: 0.0,
            count: 0,
        }
    }

    fn record(&mut self, k: usize, distance: f64, gap: f64) {
        if k >= self.tail_from {
            self.distance_sum += distance;
            self.gap_sum += gap;
            self.count += 1;
        }
    }

    fn means(&self) -> (f64, f64) {
        let n = self.count.max(1) as f64;
        (self.distance_sum / n, self.gap_sum / n)
    }
}

fn summarize<T: Scalar>(
    system: &AverageSystem<T>,
    prepared: &Prepared<T>,
    initial: &ReducedState<T>,
    last: &ReducedState<T>,
    tracker: &Tracker,
) -> DynamicSummary {
    let eq = prepared.equilibrium.state();
    let a = system.params().amplitude;
    let (tail_mean_distance, tail_output_gap) = tracker.means();
    DynamicSummary {
        equilibrium_theta: eq.theta.as_f64(),
        equilibrium_zeta: eq.zeta.as_f64(),
        b2: prepared.equilibrium.b2.as_f64(),
        epsilon: system.params().epsilon.as_f64(),
        epsilon_star: prepared.epsilon_star.as_f64(),
        initial_distance: initial.distance(&eq).as_f64(),
        terminal_distance: last.distance(&eq).as_f64(),
        terminal_theta_error: (last.theta - eq.theta).as_f64(),
        tail_mean_distance,
        tail_output_gap,
        probe_term: (a * a * system.map().second_derivative_at_zero().abs() / T::of(2.0)).as_f64(),
    }
}

fn reduced_columns() -> Vec<String> {
    ["theta_tilde", "xi", "zeta_tilde"].map(String::from).to_vec()
}

/// Simulates the reduced system for `steps` steps on replication `replication`.
pub fn run_reduced<T: Scalar>(
    system: &AverageSystem<T>,
    initial: ReducedState<T>,
    steps: usize,
    master_seed: u64,
    replication: u64,
) -> Result<DynamicRun<T>> {
    let prepared = prepare(system)?;
    simulate_reduced(system, &prepared, initial, steps, master_seed, replication)
}

fn simulate_reduced<T: Scalar>(
    system: &AverageSystem<T>,
    prepared: &Prepared<T>,
    initial: ReducedState<T>,
    steps: usize,
    master_seed: u64,
    replication: u64,
) -> Result<DynamicRun<T>> {
    let params = system.params();
    let map = system.map();
    let eq = prepared.equilibrium.state();
    let mut stream = JointStream::new(&params.perturbation(), master_seed, replication)?;
    let mut raw = vec![0.0; stream.dim()];
    let mut data = Vec::with_capacity(3 * (steps + 1));
    data.extend(initial.to_array());
    let mut tracker = Tracker::new(steps);
    let mut state = initial;
    for k in 0..steps {
        let (v, w) = draw::<T>(&mut stream, &mut raw);
        let gap = map.value(state.theta + params.amplitude * v.sin()).abs().as_f64();
        state = reduced_step(map, params, &state, v, w).map_err(|_| Error::BlowUp { index: k + 1 })?;
        tracker.record(k + 1, state.distance(&eq).as_f64(), gap);
        data.extend(state.to_array());
    }
    Ok(DynamicRun {
        trajectory: Trajectory::from_rows(params.epsilon, 3, data)?,
        columns: reduced_columns(),
        summary: summarize(system, prepared, &initial, &state, &tracker),
    })
}

/// Simulates the full closed loop; `system` must describe the plant's ς.
pub fn run_closed_loop<T: Scalar, P: Plant<T>>(
    system: &AverageSystem<T>,
    setup: &ClosedLoopSetup<T, P>,
    steps: usize,
    master_seed: u64,
    replication: u64,
) -> Result<DynamicRun<T>> {
    let n = setup.plant.state_dim();
    if setup.initial_x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: setup.initial_x.len(),
        });
    }
    let prepared = prepare(system)?;
    let params = system.params();
    let eq = prepared.equilibrium.state();
    let to_error =
        |s: &ClosedLoopState<T>| ReducedState::new(s.theta_hat - setup.theta_star, s.xi, s.zeta - setup.peak_output);
    let mut stream = JointStream::new(&params.perturbation(), master_seed, replication)?;
    let mut raw = vec![0.0; stream.dim()];
    let dim = 3 + n;
    let mut data = Vec::with_capacity(dim * (steps + 1));
    let mut state = ClosedLoopState {
        x: setup.initial_x.clone(),
        theta_hat: setup.theta_star + setup.initial.theta,
        xi: setup.initial.xi,
        zeta: setup.peak_output + setup.initial.zeta,
    };
    let push = |data: &mut Vec<T>, s: &ClosedLoopState<T>| {
        data.extend(to_error(s).to_array());
        data.extend_from_slice(&s.x);
    };
    push(&mut data, &state);
    let mut tracker = Tracker::new(steps);
    for k in 0..steps {
        let (v, w) = draw::<T>(&mut stream, &mut raw);
        state = closed_loop_step(&setup.plant, params, &state, v, w).map_err(|_| Error::BlowUp { index: k + 1 })?;
        let gap = (setup.plant.output(&state.x) - setup.peak_output).abs().as_f64();
        tracker.record(k + 1, to_error(&state).distance(&eq).as_f64(), gap);
        push(&mut data, &state);
    }
    let mut columns = reduced_columns();
    columns.extend((0..n).map(|i| format!("x_{i}")));
    Ok(DynamicRun {
        trajectory: Trajectory::from_rows(params.epsilon, dim, data)?,
        columns,
        summary: summarize(system, &prepared, &setup.initial, &to_error(&state), &tracker),
    })
}

/// Runs `replications` reduced-system runs and counts those ending with
/// |θ̃_K − θ̃^{eq}| < `tolerance`.
pub fn reduced_success_study<T: Scalar>(
    system: &AverageSystem<T>,
    initial: ReducedState<T>,
    steps: usize,
    master_seed: u64,
    replications: usize,
    tolerance: T,
) -> Result<ReducedStudy> {
    if replications == 0 {
        return Err(invalid("replications", "need at least 1"));
    }
    if !(tolerance > T::zero()) {
        return Err(invalid("tolerance", "must be positive"));
    }
    let prepared = prepare(system)?;
    let runs = replicate(replications, |r| {
        simulate_reduced(system, &prepared, initial, steps, master_seed, r)
            .map(|run| run.summary.terminal_theta_error.abs())
    });
    let mut terminal_errors = Vec::with_capacity(replications);
    let mut blowups = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(e) => terminal_errors.push(Some(e)),
            Err(Error::BlowUp { .. }) => {
                blowups.push(r as u64);
                terminal_errors.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let tol = tolerance.as_f64();
    let successes = terminal_errors.iter().flatten().filter(|&&e| e < tol).count();
    Ok(ReducedStudy {
        replications,
        tolerance: tol,
        successes,
        fraction: successes as f64 / replications as f64,
        blowups,
        terminal_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::es_dynamic::tests::params;
    use crate::es_dynamic::{DynamicEsParams, LinearTestPlant, OutputTiming, ReducedMap};
    use crate::es_static::NoiseSpec;

    fn cubic() -> ReducedMap<f64> {
        ReducedMap::polynomial(vec![0.0, 0.0, -1.0, 0.1]).unwrap()
    }

    fn noisy() -> DynamicEsParams<f64> {
        DynamicEsParams {
            epsilon: 0.002,
            noise: Some(NoiseSpec { sigma: 0.2, bound: 1.0 }),
            ..params()
        }
    }

    #[test]
    fn epsilon_above_threshold_is_refused() {
        let sys = AverageSystem::new(cubic(), params().with_epsilon(2.5)).unwrap();
        assert!(run_reduced(&sys, ReducedState::default(), 10, 1, 0).is_err());
    }

    #[test]
    fn reduced_run_converges_near_equilibrium() {
        let sys = AverageSystem::new(cubic(), noisy()).unwrap();
        let run = run_reduced(&sys, ReducedState::new(0.5, 0.0, 0.0), 100_000, 7, 0).unwrap();
        assert_eq!(run.trajectory.len(), 100_001);
        assert_eq!(run.trajectory.state(0), &[0.5, 0.0, 0.0]);
        assert!(run.summary.terminal_theta_error.abs() < 0.1, "{:?}", run.summary);
        assert!(run.summary.terminal_distance < run.summary.initial_distance);
    }

    #[test]
    fn runs_are_reproducible() {
        let sys = AverageSystem::new(cubic(), noisy()).unwrap();
        let a = run_reduced(&sys, ReducedState::new(0.3, 0.0, 0.0), 2000, 11, 3).unwrap();
        let b = run_reduced(&sys, ReducedState::new(0.3, 0.0, 0.0), 2000, 11, 3).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let c = run_reduced(&sys, ReducedState::new(0.3, 0.0, 0.0), 2000, 11, 4).unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn frozen_plant_matches_reduced_step() {
        // With x set to l(θ̂ + a sin v) before each step, the closed loop in error
        // coordinates is the reduced system.
        let theta_star = 1.5;
        let peak = 2.0;
        let shape = cubic();
        let plant = LinearTestPlant::new(0.5, theta_star, peak, shape.clone()).unwrap();
        let p = DynamicEsParams {
            epsilon: 0.05,
            ..params()
        };
        let mut reduced = ReducedState::new(0.4, -0.1, 0.2);
        let mut closed = ClosedLoopState {
            x: vec![0.0],
            theta_hat: theta_star + 0.4,
            xi: -0.1,
            zeta: peak + 0.2,
        };
        for k in 0..200 {
            let v = 0.37 * k as f64 - 3.0;
            let w = 0.01 * (k % 7) as f64 - 0.03;
            closed.x = vec![closed.theta_hat + p.amplitude * v.sin()];
            closed = closed_loop_step(&plant, &p, &closed, v, w).unwrap();
            reduced = reduced_step(&shape, &p, &reduced, v, w).unwrap();
            assert!((closed.theta_hat - theta_star - reduced.theta).abs() < 1e-12);
            assert!((closed.xi - reduced.xi).abs() < 1e-12);
            assert!((closed.zeta - peak - reduced.zeta).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_filters_when_epsilon_is_zero() {
        let plant = LinearTestPlant::new(0.5, 0.0, 0.0, cubic()).unwrap();
        let p = params().with_epsilon(0.0);
        let s = ClosedLoopState {
            x: vec![1.0],
            theta_hat: 0.3,
            xi: 0.2,
            zeta: -0.1,
        };
        let n = closed_loop_step(&plant, &p, &s, 0.7, 0.1).unwrap();
        assert_eq!((n.theta_hat, n.xi, n.zeta), (0.3, 0.2, -0.1));
        assert!((n.x[0] - (0.5 + 0.5 * (0.3 + 0.1 * 0.7f64.sin()))).abs() < 1e-15);
    }

    #[test]
    fn closed_loop_step_by_hand() {
        // f(x, u) = 0.5x + 0.5u, h(x) = 1 - x², ϱ = 2, w₁ = 4, w₂ = 0.5, ε = 0.5,
        // a = 0.5, v = π/2, W = 0.25, x = 1, θ̂ = 0.5, ξ = 0.25, ζ = 0.5.
        let shape = ReducedMap::polynomial(vec![0.0, 0.0, -1.0]).unwrap();
        let plant = LinearTestPlant::new(0.5, 0.0, 1.0, shape).unwrap();
        let p = DynamicEsParams {
            gain: 2.0,
            w1: 4.0,
            w2: 0.5,
            epsilon: 0.5,
            amplitude: 0.5,
            ..params()
        };
        let s = ClosedLoopState {
            x: vec![1.0],
            theta_hat: 0.5,
            xi: 0.25,
            zeta: 0.5,
        };
        let n = closed_loop_step(&plant, &p, &s, std::f64::consts::FRAC_PI_2, 0.25).unwrap();
        // u = 1, x⁺ = 1, y = h(1) + W = 0.25.
        assert_eq!(n.x, vec![1.0]);
        assert!((n.theta_hat - 0.75).abs() < 1e-15);
        // ξ⁺ = 0.25 - 0.5 + 2·(0.25 - 0.5) = -0.75
        assert!((n.xi + 0.75).abs() < 1e-15);
        // ζ⁺ = 0.5 - 0.125 + 0.25·0.25 = 0.4375
        assert!((n.zeta - 0.4375).abs() < 1e-15);
    }

    fn tracking_setup() -> ClosedLoopSetup<f64, LinearTestPlant<f64>> {
        let theta_star = 1.0;
        ClosedLoopSetup {
            plant: LinearTestPlant::new(0.5, theta_star, 3.0, cubic()).unwrap(),
            theta_star,
            peak_output: 3.0,
            initial_x: vec![theta_star + 0.5],
            initial: ReducedState::new(0.5, 0.0, 0.0),
        }
    }

    #[test]
    fn closed_loop_tracks_reduced_system() {
        let p = DynamicEsParams {
            output_timing: OutputTiming::AfterUpdate,
            ..noisy()
        };
        let sys = AverageSystem::new(cubic(), p).unwrap();
        let setup = tracking_setup();
        let steps = 100_000;
        let closed = run_closed_loop(&sys, &setup, steps, 5, 0).unwrap();
        let reduced = run_reduced(&sys, setup.initial, steps, 5, 0).unwrap();
        assert_eq!(closed.columns, ["theta_tilde", "xi", "zeta_tilde", "x_0"]);
        for k in (steps / 2..=steps).step_by(100) {
            let gap = (closed.trajectory.state(k)[0] - reduced.trajectory.state(k)[0]).abs();
            assert!(gap < 0.05, "k={k}: gap {gap}");
        }
    }

    #[test]
    fn output_before_probe_carries_no_gradient() {
        let sys = AverageSystem::new(cubic(), noisy()).unwrap();
        let setup = tracking_setup();
        let run = run_closed_loop(&sys, &setup, 100_000, 5, 0).unwrap();
        assert!(run.summary.terminal_theta_error > 0.25, "{:?}", run.summary);
    }

    #[test]
    fn success_study_counts_replications() {
        let sys = AverageSystem::new(cubic(), noisy()).unwrap();
        let study = reduced_success_study(&sys, ReducedState::new(0.5, 0.0, 0.0), 20_000, 3, 8, 0.1).unwrap();
        assert_eq!(study.replications, 8);
        assert_eq!(study.terminal_errors.len(), 8);
        assert!(study.blowups.is_empty());
        assert!(study.successes <= 8);
    }
}
