//! Discrete-time stochastic averaging and stochastic extremum seeking.
//!
//! The crate simulates iterations X_{k+1} = X_k + ε f(X_k, Y_{k+1}) driven by
//! ergodic noise, builds their average systems, measures how closely the two
//! track each other, and applies the machinery to two extremum-seeking
//! schemes: a quadratic static map ([`es_static`]) and a dynamic plant with an
//! output equilibrium map ([`es_dynamic`]).
//!
//! Deterministic math is generic over [`Scalar`] (f32 or f64); the aliases at
//! the crate root fix it to f64.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod es_dynamic;
pub mod es_static;
pub mod metrics;
pub mod numerics;
pub mod processes;
mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::{distance, norm, Scalar};

pub type SystemModel64 = averaging::SystemModel<f64>;
pub type AverageField64 = averaging::AverageField<f64>;
pub type Trajectory64 = averaging::Trajectory<f64>;
pub type StaticMap64 = es_static::StaticMap<f64>;
pub type EsStaticParams64 = es_static::EsStaticParams<f64>;
pub type ReducedMap64 = es_dynamic::ReducedMap<f64>;
pub type DynamicEsParams64 = es_dynamic::DynamicEsParams<f64>;
pub type AverageSystem64 = es_dynamic::AverageSystem<f64>;
