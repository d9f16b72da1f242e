use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::normal_tail;
use crate::Scalar;

/// E[sin^order(v)] for v ~ N(0, σ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantMoments {
    pub order: u32,
    pub value: f64,
}

/// Closed-form E[sin^order(v)], v ~ N(0, σ²), for orders 1 through 4.
///
/// Odd orders vanish by symmetry. The even ones follow from
/// E cos(2kv) = exp(-2k²σ²).
pub fn gaussian_sine_moment<T: Scalar>(sigma: T, order: u32) -> Result<T> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(invalid("sigma", "must be positive and finite"));
    }
    let s2 = sigma * sigma;
    let half = T::of(0.5);
    match order {
        1 | 3 => Ok(T::zero()),
        2 => Ok(half - half * (T::of(-2.0) * s2).exp()),
        4 => Ok(T::of(0.375) - half * (T::of(-2.0) * s2).exp() + T::of(0.125) * (T::of(-8.0) * s2).exp()),
        other => Err(Error::UnsupportedMoment(other)),
    }
}

/// All four supported sine moments at `sigma`.
pub fn sine_moments(sigma: f64) -> Result<Vec<InvariantMoments>> {
    (1..=4)
        .map(|order| gaussian_sine_moment(sigma, order).map(|value| InvariantMoments { order, value }))
        .collect()
}

/// Probabilities of the atoms at +bound and −bound for N(0, σ₁²) clamped to ±bound.
pub fn truncated_noise_mass(sigma1: f64, bound: f64) -> Result<(f64, f64)> {
    if !(sigma1 > 0.0) || !sigma1.is_finite() {
        return Err(invalid("sigma1", "must be positive and finite"));
    }
    if !(bound > 0.0) {
        return Err(invalid("bound", "must be positive"));
    }
    let tail = normal_tail(bound / sigma1);
    Ok((tail, tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::GaussianQuadrature;

    #[test]
    fn odd_moments_vanish() {
        assert_eq!(gaussian_sine_moment(2.0, 1).unwrap(), 0.0);
        assert_eq!(gaussian_sine_moment(0.3_f32, 3).unwrap(), 0.0);
    }

    #[test]
    fn second_moment_at_sigma_two() {
        let m2 = gaussian_sine_moment::<f64>(2.0, 2).unwrap();
        assert!((m2 - 0.49983226868604874).abs() < 1e-15);
        assert!(gaussian_sine_moment(1e-9, 2).unwrap() < 1e-17);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for sigma in [0.5, 1.0, 2.0] {
            let q = GaussianQuadrature::new(sigma).unwrap();
            for order in 1..=4 {
                let exact = gaussian_sine_moment(sigma, order).unwrap();
                let quad = q.expect(|y: f64| y.sin().powi(order as i32)).unwrap();
                assert!((exact - quad).abs() < 1e-12, "σ={sigma} order={order}");
            }
        }
    }

    #[test]
    fn unsupported_order_and_bad_sigma() {
        assert_eq!(gaussian_sine_moment(1.0, 5), Err(Error::UnsupportedMoment(5)));
        assert!(gaussian_sine_moment(0.0, 2).is_err());
    }

    #[test]
    fn truncation_atoms() {
        let (hi, lo) = truncated_noise_mass(0.2, 1.0).unwrap();
        assert_eq!(hi, lo);
        assert!((hi / 2.866515718791933e-07 - 1.0).abs() < 1e-10);
        let (hi, _) = truncated_noise_mass(1.0, f64::INFINITY).unwrap();
        assert_eq!(hi, 0.0);
        let (hi, _) = truncated_noise_mass(1.0, 1e-12).unwrap();
        assert!((hi - 0.5).abs() < 1e-11);
        assert!(truncated_noise_mass(1.0, 0.0).is_err());
    }
}
