use super::is_blown_up;
use crate::error::{Error, Result};
use crate::Scalar;

/// One classical fourth-order Runge–Kutta step of dx/dt = f(x).
pub fn rk4_step<T, F>(f: &F, x: &[T], h: T, out: &mut [T])
where
    T: Scalar,
    F: Fn(&[T], &mut [T]) + ?Sized,
{
    let n = x.len();
    let two = T::of(2.0);
    let half = h / two;
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];

    f(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + half * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + half * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    let sixth = h / T::of(6.0);
    for i in 0..n {
        out[i] = x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
}

/// Integrates `steps` fixed RK4 steps of size `h` from `x0`.
///
/// Returns the flattened grid states (`steps + 1` rows of `x0.len()` values).
/// Stops with [`Error::BlowUp`] at the first grid index whose state is
/// non-finite or beyond the blow-up bound.
pub fn rk4_integrate<T, F>(f: &F, x0: &[T], h: T, steps: usize) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[T], &mut [T]) + ?Sized,
{
    let n = x0.len();
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut next = vec![T::zero(); n];
    for k in 0..steps {
        let current = &states[k * n..(k + 1) * n];
        rk4_step(f, current, h, &mut next);
        if is_blown_up(&next) {
            return Err(Error::BlowUp { index: k + 1 });
        }
        states.extend_from_slice(&next);
    }
    Ok(states)
}
