//! Strict TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochastic_es::es_dynamic::{DynamicEsParams, OutputTiming, ReducedMap, ReducedState};
use stochastic_es::es_static::{EsStaticParams, NoiseSpec, StaticMap};
use stochastic_es::processes::ProcessSpec;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Average,
    VerifyAveraging,
    EsStatic,
    EsDynamic,
    Stability,
    Moments,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Average => "average",
            Self::VerifyAveraging => "verify-averaging",
            Self::EsStatic => "es-static",
            Self::EsDynamic => "es-dynamic",
            Self::Stability => "stability",
            Self::Moments => "moments",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// TOML integers are signed, so config seeds stop at i64::MAX.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_es: Option<StaticEsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_es: Option<DynamicEsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
}

/// The system X_{k+1} = X_k + ε f(X_k, Y_{k+1}) behind the averaging experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    /// f(x, y) = A x + B y.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        x0: Vec<f64>,
        perturbation: Vec<ProcessSpec>,
    },
    /// Estimation error of static-map extremum seeking; parameters from `[static_es]`.
    StaticError,
    /// Reduced dynamic extremum-seeking system; parameters from `[dynamic_es]`.
    ReducedEs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMode {
    #[default]
    ClosedForm,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the step size of the system section when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub steps: usize,
    #[serde(default)]
    pub replication: u64,
    #[serde(default)]
    pub average: AverageMode,
    #[serde(default = "default_average_samples")]
    pub average_samples: usize,
    /// RK4 step for the continuous average; defaults to ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rk4_step: Option<f64>,
}

fn default_average_samples() -> usize {
    stochastic_es::numerics::defaults::AVERAGE_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Strictly descending step sizes.
    pub epsilons: Vec<f64>,
    /// N in floor(N/ε).
    pub horizon: f64,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    /// Steps checked by the residual identity on replication 0 (0 disables).
    #[serde(default = "default_residual_steps")]
    pub residual_steps: usize,
}

fn default_residual_steps() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub delta: f64,
    pub radius: f64,
    /// Fixed c; otherwise 1 for the static error system and fitted elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Fixed γ; otherwise the closed-form factor or a fit per ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticEsConfig {
    pub phi_star: f64,
    pub curvature: f64,
    pub x_star: f64,
    pub amplitude: f64,
    pub epsilon: f64,
    pub probe_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    pub initial_estimate: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default = "default_band")]
    pub band_half_width: f64,
    /// Band window; defaults to the second half of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_from: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_to: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_band() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub pole: f64,
    pub theta_star: f64,
    pub peak_output: f64,
    pub initial_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicEsConfig {
    /// Coefficients of ς from the constant term up.
    pub varsigma: Vec<f64>,
    pub gain: f64,
    pub w1: f64,
    pub w2: f64,
    pub amplitude: f64,
    pub epsilon: f64,
    pub probe_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub output_timing: OutputTiming,
    /// (θ̃₀, ξ₀, ζ̃₀).
    pub initial: [f64; 3],
    pub steps: usize,
    #[serde(default = "one")]
    pub replications: usize,
    /// Success radius for |θ̃_K − θ̃^{eq}|; defaults to 10a².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub amplitude_sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub sigmas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn emit(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks that the sections the experiment needs are present and well formed.
    pub fn validate(&self) -> Result<(), CliError> {
        match self.experiment {
            ExperimentKind::Simulate | ExperimentKind::Average => {
                self.system()?;
                self.run()?;
                self.system_epsilon()?;
            }
            ExperimentKind::VerifyAveraging => {
                self.system()?;
                let v = self.verify.as_ref().ok_or_else(|| missing("verify"))?;
                if v.epsilons.is_empty() || v.epsilons.windows(2).any(|w| !(w[0] > w[1])) {
                    return Err(field("verify.epsilons", "must be a nonempty strictly descending list"));
                }
                if v.epsilons.iter().any(|&e| !(e > 0.0)) {
                    return Err(field("verify.epsilons", "must be positive"));
                }
                if !(v.horizon > 0.0) {
                    return Err(field("verify.horizon", "must be positive"));
                }
                if v.replications < 2 {
                    return Err(field("verify.replications", "need at least 2"));
                }
            }
            ExperimentKind::EsStatic => {
                self.static_es()?;
            }
            ExperimentKind::EsDynamic | ExperimentKind::Stability => {
                self.dynamic_es()?;
            }
            ExperimentKind::Moments => {
                let m = self.moments.as_ref().ok_or_else(|| missing("moments"))?;
                if m.sigmas.is_empty() || m.sigmas.iter().any(|&s| !(s > 0.0)) {
                    return Err(field("moments.sigmas", "must be a nonempty list of positive values"));
                }
                if let Some(n) = &m.noise {
                    noise_spec(n, "moments.noise")?;
                }
            }
        }
        match &self.system {
            Some(SystemConfig::StaticError) => {
                self.static_es()?;
            }
            Some(SystemConfig::ReducedEs) => {
                self.dynamic_es()?;
            }
            Some(SystemConfig::Linear { a, b, x0, perturbation }) => {
                let n = x0.len();
                if n == 0 || a.len() != n || a.iter().any(|r| r.len() != n) {
                    return Err(field("system.a", "must be square with the dimension of x0"));
                }
                if b.len() != n || b.iter().any(|r| r.len() != perturbation.len()) {
                    return Err(field(
                        "system.b",
                        "must have one row per state and one column per process",
                    ));
                }
                for p in perturbation {
                    p.validate().map_err(|e| field("system.perturbation", e))?;
                }
            }
            None => {}
        }
        Ok(())
    }

    pub fn system(&self) -> Result<&SystemConfig, CliError> {
        self.system.as_ref().ok_or_else(|| missing("system"))
    }

    pub fn run(&self) -> Result<&RunConfig, CliError> {
        self.run.as_ref().ok_or_else(|| missing("run"))
    }

    /// ε for simulate/average: `[run].epsilon`, else the system section's own.
    pub fn system_epsilon(&self) -> Result<f64, CliError> {
        let own = match self.system()? {
            SystemConfig::Linear { .. } => None,
            SystemConfig::StaticError => Some(self.static_es()?.1.epsilon),
            SystemConfig::ReducedEs => Some(self.dynamic_es()?.params.epsilon),
        };
        let eps = self
            .run
            .as_ref()
            .and_then(|r| r.epsilon)
            .or(own)
            .ok_or_else(|| field("run.epsilon", "required for a linear system"))?;
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(field("run.epsilon", "must be positive and finite"));
        }
        Ok(eps)
    }

    pub fn static_es(&self) -> Result<(StaticMap<f64>, EsStaticParams<f64>, &StaticEsConfig), CliError> {
        let c = self.static_es.as_ref().ok_or_else(|| missing("static_es"))?;
        let map = StaticMap::new(c.phi_star, c.curvature, c.x_star).map_err(|e| field("static_es", e))?;
        let noise = c.noise.as_ref().map(|n| noise_spec(n, "static_es.noise")).transpose()?;
        let params = EsStaticParams {
            amplitude: c.amplitude,
            epsilon: c.epsilon,
            probe_sigma: c.probe_sigma,
            noise,
            initial_estimate: c.initial_estimate,
        };
        params.validate().map_err(|e| field("static_es", e))?;
        if c.steps == 0 {
            return Err(field("static_es.steps", "must be at least 1"));
        }
        if c.replications == 0 {
            return Err(field("static_es.replications", "must be at least 1"));
        }
        if !(c.band_half_width > 0.0) {
            return Err(field("static_es.band_half_width", "must be positive"));
        }
        Ok((map, params, c))
    }

    pub fn dynamic_es(&self) -> Result<DynamicSetup<'_>, CliError> {
        let c = self.dynamic_es.as_ref().ok_or_else(|| missing("dynamic_es"))?;
        let map = ReducedMap::polynomial(c.varsigma.clone()).map_err(|e| field("dynamic_es.varsigma", e))?;
        if !(map.second_derivative_at_zero() < 0.0) {
            return Err(field(
                "dynamic_es.varsigma",
                "ς''(0) must be negative (a local maximum)",
            ));
        }
        let noise = c
            .noise
            .as_ref()
            .map(|n| noise_spec(n, "dynamic_es.noise"))
            .transpose()?;
        let params = DynamicEsParams {
            gain: c.gain,
            w1: c.w1,
            w2: c.w2,
            amplitude: c.amplitude,
            epsilon: c.epsilon,
            probe_sigma: c.probe_sigma,
            noise,
            output_timing: c.output_timing,
        };
        params.validate().map_err(|e| field("dynamic_es", e))?;
        if !(c.epsilon > 0.0) {
            return Err(field("dynamic_es.epsilon", "must be positive"));
        }
        if c.replications == 0 {
            return Err(field("dynamic_es.replications", "must be at least 1"));
        }
        if let Some(p) = &c.plant {
            if !(p.pole.abs() < 1.0) {
                return Err(field("dynamic_es.plant.pole", "must lie inside (-1, 1)"));
            }
        }
        if c.amplitude_sweep.iter().any(|&a| !(a > 0.0)) {
            return Err(field("dynamic_es.amplitude_sweep", "amplitudes must be positive"));
        }
        Ok(DynamicSetup {
            map,
            params,
            initial: ReducedState::new(c.initial[0], c.initial[1], c.initial[2]),
            config: c,
        })
    }
}

pub struct DynamicSetup<'a> {
    pub map: ReducedMap<f64>,
    pub params: DynamicEsParams<f64>,
    pub initial: ReducedState<f64>,
    pub config: &'a DynamicEsConfig,
}

fn noise_spec(n: &NoiseConfig, name: &str) -> Result<NoiseSpec<f64>, CliError> {
    let spec = NoiseSpec {
        sigma: n.sigma,
        bound: n.bound,
    };
    spec.process().validate().map_err(|e| field(name, e))?;
    Ok(spec)
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing section [{section}]"))
}

fn field(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {reason}"))
}
