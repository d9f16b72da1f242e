//! Deterministic numerical kernels shared by the averaging and extremum-seeking modules.

mod newton;
mod normal;
mod quadrature;
mod rk4;
mod roots;

pub use newton::{bisect, newton_scalar, NewtonOptions};
pub use normal::normal_tail;
pub use quadrature::{hermite_rule, GaussianQuadrature, QuadratureRule};
pub use rk4::{rk4_integrate, rk4_step};
pub use roots::{cubic_roots, poly_eval, quadratic_roots};

/// Default tolerances and limits. Acceptance tests pin behavior against these values.
pub mod defaults {
    /// Any state coordinate above this magnitude counts as a blow-up.
    pub const BLOWUP_BOUND: f64 = 1e12;
    /// Starting Gauss–Hermite node count.
    pub const QUADRATURE_NODES: usize = 64;
    /// Node doubling stops here; failure to settle by then is an error.
    pub const QUADRATURE_MAX_NODES: usize = 512;
    /// Successive quadrature estimates must agree to this absolute tolerance.
    pub const QUADRATURE_TOL: f64 = 1e-10;
    /// Residual tolerance required of an average equilibrium.
    pub const EQUILIBRIUM_TOL: f64 = 1e-10;
    pub const NEWTON_MAX_ITER: usize = 100;
    /// Absolute accuracy of the bisection on the stability threshold.
    pub const THRESHOLD_TOL: f64 = 1e-6;
    /// Default Birkhoff-average length for empirical average fields.
    pub const AVERAGE_SAMPLES: usize = 100_000;
}

/// True if any coordinate is non-finite or exceeds [`defaults::BLOWUP_BOUND`].
pub fn is_blown_up<T: crate::Scalar>(x: &[T]) -> bool {
    let bound = T::of(defaults::BLOWUP_BOUND);
    x.iter().any(|v| !v.is_finite() || v.abs() > bound)
}
