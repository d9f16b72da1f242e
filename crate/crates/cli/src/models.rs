//! Builds the library's averaging experiments from a configuration.

use std::sync::Arc;

use stochastic_es::averaging::{AverageField, SystemModel};
use stochastic_es::es_dynamic::{AverageSystem, DynamicEsParams, ReducedMap};
use stochastic_es::es_static::{average_error_field, error_system_model};
use stochastic_es::metrics::AveragingExperiment;
use stochastic_es::processes::ProcessSpec;

use crate::config::{AverageMode, ExperimentConfig, SystemConfig};
use crate::error::{CliError, Context};

/// A configured system together with its column names.
pub struct Built {
    pub experiment: AveragingExperiment<f64>,
    pub columns: Vec<String>,
    pub kind: &'static str,
}

/// The experiment described by `[system]`, with ε taken from
/// [`ExperimentConfig::system_epsilon`] and the average in the requested mode.
pub fn from_system(config: &ExperimentConfig, seed: u64) -> Result<Built, CliError> {
    let eps = config.system_epsilon()?;
    let mode = config.run.as_ref().map(|r| (r.average, r.average_samples));
    build(config, config.system()?, eps, seed, mode)
}

/// Like [`from_system`] but for an explicit ε.
pub fn with_epsilon(config: &ExperimentConfig, seed: u64, eps: f64) -> Result<Built, CliError> {
    let mode = config.run.as_ref().map(|r| (r.average, r.average_samples));
    build(config, config.system()?, eps, seed, mode)
}

/// Every averaging experiment a configuration implies: its `[system]`, and the
/// error or reduced systems behind `[static_es]` and `[dynamic_es]`.
pub fn implied(config: &ExperimentConfig, seed: u64) -> Result<Vec<Built>, CliError> {
    let mut out = Vec::new();
    if config.system.is_some() {
        out.push(from_system(config, seed)?);
    }
    if config.static_es.is_some() && !matches!(config.system, Some(SystemConfig::StaticError)) {
        let eps = config.static_es()?.1.epsilon;
        out.push(build(config, &SystemConfig::StaticError, eps, seed, None)?);
    }
    if config.dynamic_es.is_some() && !matches!(config.system, Some(SystemConfig::ReducedEs)) {
        let eps = config.dynamic_es()?.params.epsilon;
        out.push(build(config, &SystemConfig::ReducedEs, eps, seed, None)?);
    }
    Ok(out)
}

fn build(
    config: &ExperimentConfig,
    system: &SystemConfig,
    eps: f64,
    seed: u64,
    mode: Option<(AverageMode, usize)>,
) -> Result<Built, CliError> {
    let what = || "building the system".to_string();
    let (model, closed, perturbation, x0, columns, kind) = match system {
        SystemConfig::Linear { a, b, x0, perturbation } => {
            let (model, closed) = linear(a.clone(), b.clone(), perturbation, eps).context(what)?;
            let columns = (0..x0.len()).map(|i| format!("x_{i}")).collect();
            (model, closed, perturbation.clone(), x0.clone(), columns, "linear")
        }
        SystemConfig::StaticError => {
            let (map, mut params, _) = config.static_es()?;
            params.epsilon = eps;
            let model = error_system_model(&map, &params).context(what)?;
            let x0 = vec![params.initial_estimate - map.optimizer];
            (
                model,
                average_error_field(&map, &params),
                params.perturbation(),
                x0,
                vec!["x_tilde".to_string()],
                "static-error",
            )
        }
        SystemConfig::ReducedEs => {
            let setup = config.dynamic_es()?;
            let params = setup.params.with_epsilon(eps);
            let model = reduced_model(setup.map.clone(), params).context(what)?;
            let closed = reduced_average(setup.map, params).context(what)?;
            let columns = ["theta_tilde", "xi", "zeta_tilde"].map(String::from).to_vec();
            (
                model,
                closed,
                params.perturbation(),
                setup.initial.to_array().to_vec(),
                columns,
                "reduced-es",
            )
        }
    };
    let average = match mode {
        Some((AverageMode::Empirical, samples)) => {
            AverageField::empirical(model.clone(), perturbation.clone(), seed, samples).context(what)?
        }
        _ => closed,
    };
    Ok(Built {
        experiment: AveragingExperiment {
            model,
            average,
            perturbation,
            x0,
            master_seed: seed,
        },
        columns,
        kind,
    })
}

/// f(x, y) = A x + B y with f̄(x) = A x + B E[y].
fn linear(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    perturbation: &[ProcessSpec],
    eps: f64,
) -> stochastic_es::Result<(SystemModel<f64>, AverageField<f64>)> {
    let means = perturbation
        .iter()
        .map(|p| p.invariant_law().map(|law| law.expect(|y| y)))
        .collect::<stochastic_es::Result<Vec<_>>>()?;
    let n = a.len();
    let drift: Vec<f64> = b
        .iter()
        .map(|row| row.iter().zip(&means).map(|(b, m)| b * m).sum())
        .collect();
    let a = Arc::new(a);
    let a_avg = Arc::clone(&a);
    let model = SystemModel::new(
        n,
        perturbation.len(),
        eps,
        move |x: &[f64], y: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = dot(&a[i], x) + dot(&b[i], y);
            }
        },
    )?;
    let average = AverageField::closed_form(n, move |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = dot(&a_avg[i], x) + drift[i];
        }
    });
    Ok((model, average))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The reduced system written as X_{k+1} = X_k + ε f(X_k, (v, W)).
pub fn reduced_model(map: ReducedMap<f64>, params: DynamicEsParams<f64>) -> stochastic_es::Result<SystemModel<f64>> {
    params.validate()?;
    let noise_dim = params.perturbation().len();
    SystemModel::new(
        3,
        noise_dim,
        params.epsilon,
        move |x: &[f64], y: &[f64], out: &mut [f64]| {
            let s = y[0].sin();
            let w = y.get(1).copied().unwrap_or(0.0);
            let output = map.value(x[0] + params.amplitude * s);
            out[0] = params.gain * x[1];
            out[1] = -params.w1 * x[1] + params.w1 * (output - x[2] + w) * s;
            out[2] = -params.w2 * x[2] + params.w2 * (output + w);
        },
    )
}

/// Closed-form average of the reduced system by quadrature; NaN where the
/// quadrature does not settle.
pub fn reduced_average(map: ReducedMap<f64>, params: DynamicEsParams<f64>) -> stochastic_es::Result<AverageField<f64>> {
    let system = Arc::new(AverageSystem::new(map, params)?);
    Ok(AverageField::closed_form(3, move |x: &[f64], out: &mut [f64]| {
        let state = stochastic_es::es_dynamic::ReducedState::new(x[0], x[1], x[2]);
        match system.rhs(&state) {
            Ok(f) => out.copy_from_slice(&f),
            Err(_) => out.fill(f64::NAN),
        }
    }))
}
