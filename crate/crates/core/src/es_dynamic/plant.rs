use super::ReducedMap;
use crate::error::{invalid, Result};
use crate::Scalar;

/// Plant x_{k+1} = f(x_k, u_k), output h(x), control law u = β(x, θ) and the
/// equilibrium map l(θ) with f(l(θ), β(l(θ), θ)) = l(θ).
pub trait Plant<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn dynamics(&self, x: &[T], u: T, out: &mut [T]);
    fn output(&self, x: &[T]) -> T;
    fn control(&self, x: &[T], theta: T) -> T;
    fn equilibrium(&self, theta: T, out: &mut [T]);
}

/// Checks f(l(θ), β(l(θ), θ)) = l(θ) within `tol` on every θ in `grid`.
pub fn check_equilibrium_map<T: Scalar, P: Plant<T> + ?Sized>(plant: &P, grid: &[T], tol: T) -> Result<()> {
    let n = plant.state_dim();
    let mut eq = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    for &theta in grid {
        plant.equilibrium(theta, &mut eq);
        let u = plant.control(&eq, theta);
        plant.dynamics(&eq, u, &mut next);
        let gap = crate::distance(&eq, &next);
        if !(gap <= tol) {
            return Err(invalid(
                "equilibrium map",
                format!("l({theta}) is not a fixed point (gap {gap})"),
            ));
        }
    }
    Ok(())
}

/// Scalar test plant x⁺ = p·x + (1 − p)·u with β(x, θ) = θ, so l(θ) = θ, and
/// output h(x) = y* + ς(x − θ*).
#[derive(Debug, Clone)]
pub struct LinearTestPlant<T> {
    pub pole: T,
    pub theta_star: T,
    pub peak_output: T,
    pub shape: ReducedMap<T>,
}

impl<T: Scalar> LinearTestPlant<T> {
    pub fn new(pole: T, theta_star: T, peak_output: T, shape: ReducedMap<T>) -> Result<Self> {
        if !(pole.abs() < T::one()) {
            return Err(invalid("pole", "must lie inside (-1, 1) for a stable plant"));
        }
        Ok(Self {
            pole,
            theta_star,
            peak_output,
            shape,
        })
    }
}

impl<T: Scalar> Plant<T> for LinearTestPlant<T> {
    fn state_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &[T], u: T, out: &mut [T]) {
        out[0] = self.pole * x[0] + (T::one() - self.pole) * u;
    }

    fn output(&self, x: &[T]) -> T {
        self.peak_output + self.shape.value(x[0] - self.theta_star)
    }

    fn control(&self, _x: &[T], theta: T) -> T {
        theta
    }

    fn equilibrium(&self, theta: T, out: &mut [T]) {
        out[0] = theta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct BrokenPlant;

    impl Plant<f64> for BrokenPlant {
        fn state_dim(&self) -> usize {
            1
        }
        fn dynamics(&self, x: &[f64], u: f64, out: &mut [f64]) {
            out[0] = 0.5 * x[0] + u;
        }
        fn output(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn control(&self, _: &[f64], theta: f64) -> f64 {
            theta
        }
        fn equilibrium(&self, theta: f64, out: &mut [f64]) {
            out[0] = theta;
        }
    }

    #[test]
    fn bundled_plant_satisfies_fixed_point_identity() {
        let shape = ReducedMap::polynomial(vec![0.0, 0.0, -1.0]).unwrap();
        let plant = LinearTestPlant::new(0.5, 1.0, 2.0, shape).unwrap();
        let grid: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        check_equilibrium_map(&plant, &grid, 1e-10).unwrap();
        assert_eq!(plant.output(&[1.0]), 2.0);
    }

    #[test]
    fn wrong_equilibrium_map_is_rejected() {
        assert!(check_equilibrium_map(&BrokenPlant, &[0.0], 1e-10).is_ok());
        assert!(check_equilibrium_map(&BrokenPlant, &[1.0], 1e-10).is_err());
    }

    #[test]
    fn unstable_pole_is_rejected() {
        let shape = ReducedMap::polynomial(vec![0.0]).unwrap();
        assert!(LinearTestPlant::new(1.0, 0.0, 0.0, shape).is_err());
    }
}
