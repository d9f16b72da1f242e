use super::defaults;
use crate::error::{Error, Result};
use crate::Scalar;

/// Stopping rules for [`newton_scalar`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T> {
    /// Converged once |g(x)| ≤ `f_tol`.
    pub f_tol: T,
    /// Converged once a full Newton step is at most `x_tol` in magnitude.
    pub x_tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            f_tol: T::tol(1e-12),
            x_tol: T::zero(),
            max_iter: defaults::NEWTON_MAX_ITER,
        }
    }
}

/// Damped Newton iteration for a scalar root.
///
/// Each step is halved until |g| strictly decreases. If no halving decreases
/// the residual (round-off floor), the iterate is returned when the last full
/// step was already below `x_tol` or the residual meets `f_tol`.
pub fn newton_scalar<T, G, D>(g: G, dg: D, x0: T, opts: NewtonOptions<T>) -> Result<T>
where
    T: Scalar,
    G: Fn(T) -> T,
    D: Fn(T) -> T,
{
    let mut x = x0;
    let mut gx = g(x);
    for _ in 0..opts.max_iter {
        if !gx.is_finite() {
            break;
        }
        if gx.abs() <= opts.f_tol {
            return Ok(x);
        }
        let slope = dg(x);
        if slope == T::zero() || !slope.is_finite() {
            break;
        }
        let step = gx / slope;
        if step.abs() <= opts.x_tol {
            return Ok(x - step);
        }
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..50 {
            let candidate = x - lambda * step;
            let gc = g(candidate);
            if gc.is_finite() && gc.abs() < gx.abs() {
                x = candidate;
                gx = gc;
                accepted = true;
                break;
            }
            lambda = lambda / T::of(2.0);
        }
        if !accepted {
            // Round-off floor: no step reduces the residual any further.
            if step.abs() <= T::epsilon().sqrt() * (T::one() + x.abs()) {
                return Ok(x);
            }
            break;
        }
    }
    Err(Error::NonConvergence {
        method: "newton",
        iterations: opts.max_iter,
        residual: gx.as_f64(),
    })
}

/// Plain bisection on a sign-changing bracket.
pub fn bisect<T: Scalar, G: Fn(T) -> T>(g: G, mut lo: T, mut hi: T, tol: T) -> Result<T> {
    let mut glo = g(lo);
    let ghi = g(hi);
    if glo == T::zero() {
        return Ok(lo);
    }
    if ghi == T::zero() {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(crate::error::invalid("bracket", "g(lo) and g(hi) must differ in sign"));
    }
    for _ in 0..400 {
        let mid = (lo + hi) / T::of(2.0);
        if (hi - lo).abs() <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let gm = g(mid);
        if gm == T::zero() {
            return Ok(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / T::of(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root_in_one_step() {
        let calls = std::cell::Cell::new(0);
        let root = newton_scalar(
            |x: f64| {
                calls.set(calls.get() + 1);
                x
            },
            |_| 1.0,
            1.0,
            NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(root, 0.0);
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn square_root_of_two() {
        let root = newton_scalar(|x: f64| x * x - 2.0, |x| 2.0 * x, 1.0, NewtonOptions::default()).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_an_error() {
        let opts = NewtonOptions {
            max_iter: 20,
            ..NewtonOptions::default()
        };
        let err = newton_scalar(|x: f64| x * x + 1.0, |x| 2.0 * x, 0.5, opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn bisection_matches_newton() {
        let g = |x: f64| x.powi(3) - x - 1.0;
        let b = bisect(g, 1.0, 2.0, 1e-14).unwrap();
        let n = newton_scalar(g, |x| 3.0 * x * x - 1.0, 1.5, NewtonOptions::default()).unwrap();
        assert!((b - n).abs() < 1e-12);
    }
}
