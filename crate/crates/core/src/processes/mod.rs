//! Ergodic perturbation sequences with known invariant laws.
//!
//! Every stream is driven by a ChaCha20 generator keyed by
//! `(master seed, replication, component)`, so replications are independent
//! and reproduce bit-for-bit in any generation order.

mod markov;
mod moments;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use markov::{period, stationary_distribution};
pub use moments::{gaussian_sine_moment, sine_moments, truncated_noise_mass, InvariantMoments};

/// Declarative description of a perturbation process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessSpec {
    /// i.i.d. N(0, σ²).
    IidGaussian { sigma: f64 },
    /// i.i.d. N(0, σ²) clamped to [-bound, bound].
    TruncatedGaussian { sigma: f64, bound: f64 },
    /// Stationary finite-state Markov chain emitting `states[i]` in state i.
    FiniteMarkov {
        transition: Vec<Vec<f64>>,
        states: Vec<f64>,
    },
    /// Ornstein–Uhlenbeck process dX = -θX dt + s dB sampled every `sample_period`
    /// with its exact Gaussian transition.
    SampledOu {
        mean_reversion: f64,
        volatility: f64,
        sample_period: f64,
    },
}

/// Invariant distribution of a process, in a form that supports exact or
/// quadrature expectations.
#[derive(Debug, Clone, PartialEq)]
pub enum InvariantLaw {
    Gaussian {
        sd: f64,
    },
    /// N(0, sd²) with the mass beyond ±bound moved onto two atoms.
    TruncatedGaussian {
        sd: f64,
        bound: f64,
    },
    /// Finitely many atoms (value, probability).
    Discrete(Vec<(f64, f64)>),
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::IidGaussian { sigma } => positive("sigma", *sigma),
            Self::TruncatedGaussian { sigma, bound } => {
                positive("sigma", *sigma)?;
                if !(*bound >= 0.0) {
                    return Err(invalid("bound", "must be nonnegative"));
                }
                Ok(())
            }
            Self::FiniteMarkov { transition, states } => markov::validate(transition, states),
            Self::SampledOu {
                mean_reversion,
                volatility,
                sample_period,
            } => {
                positive("mean_reversion", *mean_reversion)?;
                positive("sample_period", *sample_period)?;
                if !(*volatility >= 0.0) || !volatility.is_finite() {
                    return Err(invalid("volatility", "must be nonnegative and finite"));
                }
                Ok(())
            }
        }
    }

    pub fn invariant_law(&self) -> Result<InvariantLaw> {
        self.validate()?;
        Ok(match self {
            Self::IidGaussian { sigma } => InvariantLaw::Gaussian { sd: *sigma },
            Self::TruncatedGaussian { sigma, bound } => InvariantLaw::TruncatedGaussian {
                sd: *sigma,
                bound: *bound,
            },
            Self::FiniteMarkov { transition, states } => {
                let pi = stationary_distribution(transition)?;
                InvariantLaw::Discrete(states.iter().copied().zip(pi).collect())
            }
            Self::SampledOu {
                mean_reversion,
                volatility,
                ..
            } => {
                let sd = volatility / (2.0 * mean_reversion).sqrt();
                if sd == 0.0 {
                    InvariantLaw::Discrete(vec![(0.0, 1.0)])
                } else {
                    InvariantLaw::Gaussian { sd }
                }
            }
        })
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

impl InvariantLaw {
    /// ∫ g dμ. Continuous parts use composite Simpson on ±12 sd, which stays
    /// accurate for test functions with kinks.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        match self {
            Self::Gaussian { sd } => simpson_gaussian(&g, *sd, -12.0 * sd, 12.0 * sd),
            Self::TruncatedGaussian { sd, bound } => {
                let lim = bound.min(12.0 * sd);
                let tail = crate::numerics::normal_tail(bound / sd);
                let interior = if lim > 0.0 {
                    simpson_gaussian(&g, *sd, -lim, lim)
                } else {
                    0.0
                };
                interior + tail * (g(*bound) + g(-bound))
            }
            Self::Discrete(atoms) => atoms.iter().map(|&(v, p)| p * g(v)).sum(),
        }
    }
}

fn simpson_gaussian<G: Fn(f64) -> f64>(g: &G, sd: f64, lo: f64, hi: f64) -> f64 {
    const INTERVALS: usize = 20_000;
    let h = (hi - lo) / INTERVALS as f64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let f = |y: f64| g(y) * norm * (-0.5 * (y / sd).powi(2)).exp();
    let mut sum = f(lo) + f(hi);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// Derives the generator for one (replication, component) sub-stream.
pub fn stream_rng(master_seed: u64, replication: u64, component: u8) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream((replication << 8) | component as u64);
    rng
}

/// Anything that yields a perturbation vector Y_{k+1} per call.
pub trait Sampler {
    fn dim(&self) -> usize;
    fn sample_into(&mut self, out: &mut [f64]);
}

#[derive(Debug, Clone)]
enum StreamState {
    Gaussian {
        sigma: f64,
    },
    Truncated {
        sigma: f64,
        bound: f64,
    },
    Markov {
        cumulative: Vec<Vec<f64>>,
        states: Vec<f64>,
        current: usize,
    },
    Ou {
        decay: f64,
        step_sd: f64,
        value: f64,
    },
}

/// A single scalar perturbation stream.
#[derive(Debug, Clone)]
pub struct PerturbationStream {
    rng: ChaCha20Rng,
    state: StreamState,
}

impl PerturbationStream {
    pub fn new(spec: &ProcessSpec, mut rng: ChaCha20Rng) -> Result<Self> {
        spec.validate()?;
        let state = match spec {
            ProcessSpec::IidGaussian { sigma } => StreamState::Gaussian { sigma: *sigma },
            ProcessSpec::TruncatedGaussian { sigma, bound } => StreamState::Truncated {
                sigma: *sigma,
                bound: *bound,
            },
            ProcessSpec::FiniteMarkov { transition, states } => {
                let pi = stationary_distribution(transition)?;
                let current = draw_index(&cumulate(&pi), rng.random::<f64>());
                StreamState::Markov {
                    cumulative: transition.iter().map(|row| cumulate(row)).collect(),
                    states: states.clone(),
                    current,
                }
            }
            ProcessSpec::SampledOu {
                mean_reversion,
                volatility,
                sample_period,
            } => {
                let decay = (-mean_reversion * sample_period).exp();
                let stationary_sd = volatility / (2.0 * mean_reversion).sqrt();
                let step_sd = stationary_sd * (1.0 - decay * decay).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                StreamState::Ou {
                    decay,
                    step_sd,
                    value: stationary_sd * z,
                }
            }
        };
        Ok(Self { rng, state })
    }

    /// Stream for component 0 of replication 0 under `seed`.
    pub fn from_seed(spec: &ProcessSpec, seed: u64) -> Result<Self> {
        Self::new(spec, stream_rng(seed, 0, 0))
    }

    /// Returns Y_{k+1} and advances the stream.
    pub fn next_sample(&mut self) -> f64 {
        match &mut self.state {
            StreamState::Gaussian { sigma } => {
                let z: f64 = self.rng.sample(StandardNormal);
                *sigma * z
            }
            StreamState::Truncated { sigma, bound } => {
                let z: f64 = self.rng.sample(StandardNormal);
                (*sigma * z).clamp(-*bound, *bound)
            }
            StreamState::Markov {
                cumulative,
                states,
                current,
            } => {
                let u: f64 = self.rng.random();
                *current = draw_index(&cumulative[*current], u);
                states[*current]
            }
            StreamState::Ou { decay, step_sd, value } => {
                let z: f64 = self.rng.sample(StandardNormal);
                *value = *decay * *value + *step_sd * z;
                *value
            }
        }
    }
}

impl Iterator for PerturbationStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_sample())
    }
}

impl Sampler for PerturbationStream {
    fn dim(&self) -> usize {
        1
    }

    fn sample_into(&mut self, out: &mut [f64]) {
        out[0] = self.next_sample();
    }
}

fn cumulate(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw_index(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().unwrap_or(&1.0);
    let target = u * total;
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Independent scalar streams stacked into one vector-valued perturbation.
#[derive(Debug, Clone)]
pub struct JointStream {
    streams: Vec<PerturbationStream>,
}

impl JointStream {
    /// Component j of `specs` runs on sub-stream (replication, j).
    pub fn new(specs: &[ProcessSpec], master_seed: u64, replication: u64) -> Result<Self> {
        if specs.len() > u8::MAX as usize {
            return Err(invalid("perturbation", "at most 255 components"));
        }
        let streams = specs
            .iter()
            .enumerate()
            .map(|(j, spec)| PerturbationStream::new(spec, stream_rng(master_seed, replication, j as u8)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { streams })
    }
}

impl Sampler for JointStream {
    fn dim(&self) -> usize {
        self.streams.len()
    }

    fn sample_into(&mut self, out: &mut [f64]) {
        for (slot, stream) in out.iter_mut().zip(self.streams.iter_mut()) {
            *slot = stream.next_sample();
        }
    }
}

/// Replays a recorded perturbation sequence (row k holds Y_{k+1}).
#[derive(Debug, Clone)]
pub struct ReplaySampler {
    dim: usize,
    values: Vec<f64>,
    cursor: usize,
}

impl ReplaySampler {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(invalid("values", "length must be a multiple of the dimension"));
        }
        Ok(Self { dim, values, cursor: 0 })
    }

    /// A sampler that repeats one vector forever.
    pub fn constant(value: Vec<f64>) -> Self {
        Self {
            dim: value.len(),
            values: value,
            cursor: 0,
        }
    }

    /// Records `steps` draws from another sampler.
    pub fn record<S: Sampler + ?Sized>(source: &mut S, steps: usize) -> Self {
        let dim = source.dim();
        let mut values = vec![0.0; dim * steps];
        for row in values.chunks_mut(dim) {
            source.sample_into(row);
        }
        Self { dim, values, cursor: 0 }
    }
}

impl Sampler for ReplaySampler {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Wraps around at the end of the recording.
    fn sample_into(&mut self, out: &mut [f64]) {
        if self.dim == 0 {
            return;
        }
        let rows = self.values.len() / self.dim;
        let row = self.cursor % rows;
        out.copy_from_slice(&self.values[row * self.dim..(row + 1) * self.dim]);
        self.cursor += 1;
    }
}
