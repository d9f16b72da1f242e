use serde::Serialize;
use stochastic_es::averaging::integrate_continuous_average;
use stochastic_es::es_dynamic::{
    eigenvalue_oracle, eigenvalues_closed_form, reduced_success_study, run_closed_loop, run_reduced, spectral_radius,
    AmplitudeRow, AverageSystem, ClosedLoopSetup, DynamicSummary, LinearTestPlant, ReducedStudy,
};
use stochastic_es::es_static::{
    average_error_factor, band_study, epsilon_star, run_static_replication, BandCheck, BandStudy, StaticSummary,
};
use stochastic_es::metrics::{
    averaging_rate_study, compute_residual, envelope_exceedance, fit_envelope, horizon_steps, EnvelopeSpec,
    ExceedanceReport,
};
use stochastic_es::processes::{sine_moments, truncated_noise_mass, InvariantMoments};
use stochastic_es::{distance, norm};

use crate::config::{AverageMode, ExperimentConfig, SystemConfig};
use crate::error::{CliError, Context};
use crate::models;
use crate::output::Outputs;

pub fn simulate(config: &ExperimentConfig, seed: u64) -> Result<Outputs, CliError> {
    let built = models::from_system(config, seed)?;
    let run = config.run()?;
    let exp = &built.experiment;
    let eps = exp.model.epsilon();
    let traj = exp.original(run.replication, run.steps).context(|| {
        format!(
            "simulate: {} system, epsilon {eps}, replication {}",
            built.kind, run.replication
        )
    })?;
    let max_norm = traj.states().map(norm).fold(0.0, f64::max);
    let mut out = Outputs::default();
    out.trajectory("original.csv", &traj, &built.columns);
    out.json(
        "summary.json",
        &SimulateSummary {
            system: built.kind,
            epsilon: eps,
            steps: run.steps,
            replication: run.replication,
            initial_state: exp.x0.clone(),
            final_state: traj.last().to_vec(),
            max_norm,
        },
    );
    Ok(out)
}

#[derive(Serialize)]
struct SimulateSummary {
    system: &'static str,
    epsilon: f64,
    steps: usize,
    replication: u64,
    initial_state: Vec<f64>,
    final_state: Vec<f64>,
    max_norm: f64,
}

pub fn average(config: &ExperimentConfig, seed: u64) -> Result<Outputs, CliError> {
    let built = models::from_system(config, seed)?;
    let run = config.run()?;
    let exp = &built.experiment;
    let eps = exp.model.epsilon();
    let ctx = |what: &str| format!("average: {what} of the {} system, epsilon {eps}", built.kind);
    let discrete = exp.average_path(run.steps).context(|| ctx("discrete iteration"))?;
    let horizon = eps * run.steps as f64;
    let h = run.rk4_step.unwrap_or(eps);
    let continuous = integrate_continuous_average(&exp.average, &exp.x0, horizon, h).context(|| ctx("RK4"))?;
    let end = continuous.time(continuous.last_index());
    let mut gap = 0.0f64;
    for k in 0..discrete.len() {
        let t = discrete.time(k).min(end);
        let c = continuous.embed_time(t).context(|| ctx("time embedding"))?;
        gap = gap.max(distance(discrete.state(k), c));
    }
    let mut out = Outputs::default();
    out.trajectory("average_discrete.csv", &discrete, &built.columns);
    out.trajectory("average_continuous.csv", &continuous, &built.columns);
    out.json(
        "summary.json",
        &AverageSummary {
            system: built.kind,
            mode: run.average,
            epsilon: eps,
            steps: run.steps,
            rk4_step: continuous.epsilon(),
            horizon,
            final_discrete: discrete.last().to_vec(),
            final_continuous: continuous.last().to_vec(),
            max_discrete_continuous_gap: gap,
        },
    );
    Ok(out)
}

#[derive(Serialize)]
struct AverageSummary {
    system: &'static str,
    mode: AverageMode,
    epsilon: f64,
    steps: usize,
    rk4_step: f64,
    horizon: f64,
    final_discrete: Vec<f64>,
    final_continuous: Vec<f64>,
    max_discrete_continuous_gap: f64,
}

/// Median sup-deviations may grow by at most this fraction as ε decreases.
pub const MEDIAN_SLACK: f64 = 0.10;

pub fn verify_averaging(config: &ExperimentConfig, seed: u64) -> Result<Outputs, CliError> {
    let v = config.verify.as_ref().expect("validated");
    let built = models::with_epsilon(config, seed, v.epsilons[0])?;
    let exp = &built.experiment;
    let reports = averaging_rate_study(exp, &v.epsilons, v.horizon, v.replications)
        .context(|| format!("verify-averaging: rate study on the {} system", built.kind))?;
    let mut out = Outputs::default();
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| {
            vec![
                r.epsilon,
                r.horizon_steps as f64,
                r.median,
                r.sup_deviation,
                r.blowups.len() as f64,
            ]
        })
        .collect();
    out.table(
        "rate_study.csv",
        &["epsilon", "horizon_steps", "median", "max", "blowups"],
        &rows,
    );
    let medians: Vec<f64> = reports.iter().map(|r| r.median).collect();
    let median_trend = nonincreasing_with_slack(&medians, MEDIAN_SLACK);

    let mut envelope_rows = Vec::new();
    let mut envelope_trend = None;
    if let Some(env) = &v.envelope {
        let mut reports = Vec::new();
        for &eps in &v.epsilons {
            let e = models::with_epsilon(config, seed, eps)?.experiment;
            let steps = horizon_steps(v.horizon, eps);
            let ctx = || format!("verify-averaging: envelope at epsilon {eps}");
            let spec = envelope_for(config, &e, env, eps, steps).context(ctx)?;
            let report = envelope_exceedance(&e, &spec, steps, v.replications).context(ctx)?;
            envelope_rows.push(vec![
                eps,
                spec.c,
                spec.gamma,
                spec.delta,
                report.estimate,
                report.std_error,
                report.blowups.len() as f64,
            ]);
            reports.push(report);
        }
        out.table(
            "envelope.csv",
            &["epsilon", "c", "gamma", "delta", "estimate", "std_error", "blowups"],
            &envelope_rows,
        );
        envelope_trend = Some(nonincreasing_within_se(&reports));
    }

    let residual = if v.residual_steps > 0 {
        Some(residual_check(&built, v.residual_steps)?)
    } else {
        None
    };
    out.json(
        "summary.json",
        &VerifySummary {
            system: built.kind,
            horizon: v.horizon,
            replications: v.replications,
            reports,
            median_nonincreasing: median_trend,
            median_slack: MEDIAN_SLACK,
            envelope_nonincreasing: envelope_trend,
            residual,
        },
    );
    Ok(out)
}

fn envelope_for(
    config: &ExperimentConfig,
    exp: &stochastic_es::metrics::AveragingExperiment<f64>,
    env: &crate::config::EnvelopeConfig,
    eps: f64,
    steps: usize,
) -> stochastic_es::Result<EnvelopeSpec<f64>> {
    let origin = vec![0.0; exp.x0.len()];
    let (c, gamma) = match (config.system.as_ref(), env.c, env.gamma) {
        (_, Some(c), Some(g)) => (c, g),
        (Some(SystemConfig::StaticError), c, g) => {
            let (map, mut params, _) = config.static_es().expect("validated");
            params.epsilon = eps;
            (
                c.unwrap_or(1.0),
                g.unwrap_or_else(|| average_error_factor(&map, &params).abs()),
            )
        }
        (_, c, g) => {
            let fitted = fit_envelope(&exp.average_path(steps)?, &origin, env.delta, env.radius)?;
            (c.unwrap_or(fitted.c), g.unwrap_or(fitted.gamma))
        }
    };
    EnvelopeSpec::new(c, gamma, env.delta, env.radius)
}

/// True when each value is at most (1 + slack) times its predecessor.
pub fn nonincreasing_with_slack(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

/// True when each estimate exceeds its predecessor by at most one pooled
/// standard error.
pub fn nonincreasing_within_se(reports: &[ExceedanceReport]) -> bool {
    reports.windows(2).all(|w| {
        let pooled = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].estimate <= w[0].estimate + pooled
    })
}

#[derive(Serialize)]
struct VerifySummary {
    system: &'static str,
    horizon: f64,
    replications: usize,
    reports: Vec<stochastic_es::metrics::DeviationReport>,
    median_nonincreasing: bool,
    median_slack: f64,
    envelope_nonincreasing: Option<bool>,
    residual: Option<ResidualCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualCheck {
    pub system: &'static str,
    pub epsilon: f64,
    pub steps: usize,
    pub max_residual_norm: f64,
    pub identity_holds: bool,
}

/// Replays replication 0 and checks X_{k+1} = X_k + ε f̄(X_k) + R_k step by step.
pub fn residual_check(built: &models::Built, steps: usize) -> Result<ResidualCheck, CliError> {
    let exp = &built.experiment;
    let ctx = || format!("residual check on the {} system", built.kind);
    let traj = exp.original(0, steps).context(ctx)?;
    let mut replay = exp.stream(0).context(ctx)?;
    let (identity_holds, max_residual_norm) = match compute_residual(&exp.model, &exp.average, &traj, &mut replay) {
        Ok(r) => (true, r.iter().map(|v| norm(v)).fold(0.0, f64::max)),
        Err(stochastic_es::Error::ResidualMismatch { .. }) => (false, f64::NAN),
        Err(e) => return Err(e).context(ctx),
    };
    Ok(ResidualCheck {
        system: built.kind,
        epsilon: exp.model.epsilon(),
        steps,
        max_residual_norm,
        identity_holds,
    })
}

pub fn es_static(config: &ExperimentConfig, seed: u64) -> Result<Outputs, CliError> {
    let (map, params, c) = config.static_es()?;
    let band = BandCheck {
        half_width: c.band_half_width,
        from: c.band_from.unwrap_or(c.steps / 2),
        to: c.band_to.unwrap_or(c.steps),
    };
    let run = run_static_replication(&map, &params, c.steps, seed, 0, &band)
        .context(|| format!("es-static: replication 0, epsilon {}", params.epsilon))?;
    let study = if c.replications > 1 {
        Some(
            band_study(&map, &params, c.steps, seed, c.replications, &band)
                .context(|| "es-static: band study".to_string())?,
        )
    } else {
        None
    };
    let mut out = Outputs::default();
    let xs: Vec<Vec<f64>> = run
        .estimates
        .iter()
        .enumerate()
        .map(|(k, &x)| vec![k as f64, x])
        .collect();
    out.table("x_hat.csv", &["k", "x_hat"], &xs);
    let ys: Vec<Vec<f64>> = run
        .outputs
        .iter()
        .enumerate()
        .map(|(k, &y)| vec![(k + 1) as f64, y])
        .collect();
    out.table("y.csv", &["k", "y"], &ys);
    out.json(
        "summary.json",
        &StaticReport {
            epsilon: params.epsilon,
            epsilon_star: epsilon_star(&map, &params).ok(),
            band,
            run: run.summary,
            band_study: study,
        },
    );
    Ok(out)
}

#[derive(Serialize)]
struct StaticReport {
    epsilon: f64,
    epsilon_star: Option<f64>,
    band: BandCheck<f64>,
    run: StaticSummary,
    band_study: Option<BandStudy>,
}

pub fn es_dynamic(config: &ExperimentConfig, seed: u64) -> Result<Outputs, CliError> {
    let setup = config.dynamic_es()?;
    let c = setup.config;
    let ctx = |what: &str| format!("es-dynamic: {what}, epsilon {}", setup.params.epsilon);
    let system = AverageSystem::new(setup.map.clone(), setup.params).context(|| ctx("average system"))?;
    let stability = stability_report(&system, &c.amplitude_sweep)?;
    let reduced = run_reduced(&system, setup.initial, c.steps, seed, 0).context(|| ctx("reduced run"))?;
    let mut out = Outputs::default();
    out.trajectory("reduced.csv", &reduced.trajectory, &reduced.columns);
    let mut closed_loop = None;
    if let Some(p) = &c.plant {
        let plant =
            LinearTestPlant::new(p.pole, p.theta_star, p.peak_output, setup.map.clone()).context(|| ctx("plant"))?;
        let loop_setup = ClosedLoopSetup {
            plant,
            theta_star: p.theta_star,
            peak_output: p.peak_output,
            initial_x: vec![p.initial_x],
            initial: setup.initial,
        };
        let run = run_closed_loop(&system, &loop_setup, c.steps, seed, 0).context(|| ctx("closed-loop run"))?;
        out.trajectory("closedloop.csv", &run.trajectory, &run.columns);
        closed_loop = Some(run.summary);
    }
    let study = if c.replications > 1 {
        let tolerance = c
            .success_tolerance
            .unwrap_or(10.0 * setup.params.amplitude * setup.params.amplitude);
        Some(
            reduced_success_study(&system, setup.initial, c.steps, seed, c.replications, tolerance)
                .context(|| ctx("success study"))?,
        )
    } else {
        None
    };
    out.json(
        "summary.json",
        &DynamicReport {
            output_timing: setup.params.output_timing,
            reduced: reduced.summary,
            closed_loop,
            success_study: study,
        },
    );
    out.json("stability.json", &stability);
    Ok(out)
}

#[derive(Serialize)]
struct DynamicReport {
    output_timing: stochastic_es::es_dynamic::OutputTiming,
    reduced: DynamicSummary,
    closed_loop: Option<DynamicSummary>,
    success_study: Option<ReducedStudy>,
}

pub fn stability(config: &ExperimentConfig) -> Result<Outputs, CliError> {
    let setup = config.dynamic_es()?;
    let system = AverageSystem::new(setup.map, setup.params).context(|| "stability: average system".to_string())?;
    let report = stability_report(&system, &setup.config.amplitude_sweep)?;
    let mut out = Outputs::default();
    out.json("stability.json", &report);
    Ok(out)
}

#[derive(Serialize)]
pub struct StabilityReport {
    pub epsilon: f64,
    pub equilibrium: [f64; 3],
    pub equilibrium_residual: f64,
    pub b1: f64,
    pub b2: f64,
    pub asymptotic_theta: f64,
    pub asymptotic_zeta: f64,
    pub j21: f64,
    pub j31: f64,
    pub jacobian: [[f64; 3]; 3],
    pub eigenvalues: Vec<Eigenvalue>,
    pub oracle_eigenvalues: Vec<Eigenvalue>,
    pub spectral_radius: f64,
    pub stable_at_epsilon: bool,
    pub epsilon_star: Option<f64>,
    pub verified_grid: Vec<(f64, f64)>,
    pub amplitude_sweep: Vec<AmplitudeRow>,
    pub largest_admissible_amplitude: Option<f64>,
}

#[derive(Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

fn stability_report(system: &AverageSystem<f64>, sweep: &[f64]) -> Result<StabilityReport, CliError> {
    let ctx = |what: &str| format!("stability: {what}");
    let eq = system.solve_equilibrium().context(|| ctx("equilibrium"))?;
    let asymptotic = system
        .asymptotic_equilibrium()
        .context(|| ctx("asymptotic equilibrium"))?;
    let j21 = system.j21(&eq).context(|| ctx("J21"))?;
    let j31 = system.j31(&eq).context(|| ctx("J31"))?;
    let jacobian = system.jacobian(&eq).context(|| ctx("Jacobian"))?;
    let convert = |zs: &[num_complex::Complex<f64>]| {
        zs.iter()
            .map(|z| Eigenvalue {
                re: z.re,
                im: z.im,
                modulus: z.norm(),
            })
            .collect::<Vec<_>>()
    };
    let closed = eigenvalues_closed_form(system.params(), j21);
    let oracle = eigenvalue_oracle(&jacobian);
    let radius = spectral_radius(&closed);
    let threshold = match system.threshold_for(j21) {
        Ok(t) => Some(t),
        Err(stochastic_es::Error::Unstable(_)) => None,
        Err(e) => return Err(e).context(|| ctx("threshold")),
    };
    let rows = AverageSystem::amplitude_sweep(system.map(), system.params(), sweep);
    let largest = rows
        .iter()
        .filter(|r| r.admissible)
        .map(|r| r.amplitude)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    Ok(StabilityReport {
        epsilon: system.params().epsilon,
        equilibrium: eq.state().to_array(),
        equilibrium_residual: eq.residual,
        b1: eq.b1,
        b2: eq.b2,
        asymptotic_theta: asymptotic.theta,
        asymptotic_zeta: asymptotic.zeta,
        j21,
        j31,
        jacobian,
        eigenvalues: convert(&closed),
        oracle_eigenvalues: convert(&oracle),
        spectral_radius: radius,
        stable_at_epsilon: radius < 1.0,
        epsilon_star: threshold.as_ref().map(|t| t.epsilon_star),
        verified_grid: threshold.map(|t| t.verified).unwrap_or_default(),
        amplitude_sweep: rows,
        largest_admissible_amplitude: largest,
    })
}

pub fn moments(config: &ExperimentConfig) -> Result<Outputs, CliError> {
    let m = config.moments.as_ref().expect("validated");
    let mut probes = Vec::with_capacity(m.sigmas.len());
    for &sigma in &m.sigmas {
        let moments = sine_moments(sigma).context(|| format!("moments: sigma {sigma}"))?;
        probes.push(ProbeMoments { sigma, moments });
    }
    let noise = match &m.noise {
        Some(n) => {
            let (upper, lower) =
                truncated_noise_mass(n.sigma, n.bound).context(|| "moments: noise atoms".to_string())?;
            Some(NoiseAtoms {
                sigma: n.sigma,
                bound: n.bound,
                upper_atom_mass: upper,
                lower_atom_mass: lower,
            })
        }
        None => None,
    };
    let mut out = Outputs::default();
    out.json("moments.json", &MomentsReport { probes, noise });
    Ok(out)
}

#[derive(Serialize)]
struct MomentsReport {
    probes: Vec<ProbeMoments>,
    noise: Option<NoiseAtoms>,
}

#[derive(Serialize)]
struct ProbeMoments {
    sigma: f64,
    moments: Vec<InvariantMoments>,
}

#[derive(Serialize)]
struct NoiseAtoms {
    sigma: f64,
    bound: f64,
    upper_atom_mass: f64,
    lower_atom_mass: f64,
}
