use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::defaults;
use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Gauss–Hermite rule for the weight e^{-t²} (physicists' convention).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> QuadratureRule<T> {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Approximates ∫ g(t) e^{-t²} dt. Mirrored nodes are summed in pairs, so
    /// odd integrands give exactly zero.
    pub fn integrate<F: Fn(T) -> T>(&self, g: F) -> T {
        let n = self.nodes.len();
        let mut acc = T::zero();
        for i in 0..n / 2 {
            acc = acc + self.weights[i] * (g(self.nodes[i]) + g(self.nodes[n - 1 - i]));
        }
        if n % 2 == 1 {
            acc = acc + self.weights[n / 2] * g(self.nodes[n / 2]);
        }
        acc
    }
}

/// Builds the `order`-point Gauss–Hermite rule.
///
/// Nodes start as eigenvalues of the symmetric Jacobi matrix and are polished
/// by Newton steps on the orthonormal Hermite recurrence; weights come from the
/// recurrence derivative at the polished node. The work is done in f64 and
/// converted.
pub fn hermite_rule<T: Scalar>(order: usize) -> Result<QuadratureRule<T>> {
    if order == 0 {
        return Err(invalid("order", "quadrature order must be at least 1"));
    }
    let n = order;
    let nf = n as f64;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(f64::total_cmp);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for mut z in guesses {
        for _ in 0..10 {
            let (p1, p2) = hermite_pair(n, z, pim4);
            let step = p1 / ((2.0 * nf).sqrt() * p2);
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, p2) = hermite_pair(n, z, pim4);
        let pp = (2.0 * nf).sqrt() * p2;
        nodes.push(z);
        weights.push(2.0 / (pp * pp));
    }
    // Exact symmetry about the origin.
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    if nodes.windows(2).any(|p| !(p[0] < p[1])) || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonConvergence {
            method: "hermite node refinement",
            iterations: 10,
            residual: f64::NAN,
        });
    }
    Ok(QuadratureRule {
        nodes: nodes.into_iter().map(T::of).collect(),
        weights: weights.into_iter().map(T::of).collect(),
    })
}

/// Orthonormal Hermite values (p_n(z), p_{n-1}(z)).
fn hermite_pair(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Expectations against N(0, σ²) by Gauss–Hermite quadrature with node doubling.
///
/// Uses the substitution y = √2·σ·t. Rules above the base order are built on
/// first use.
#[derive(Debug)]
pub struct GaussianQuadrature<T> {
    sigma: T,
    tol: T,
    levels: Vec<OnceLock<QuadratureRule<T>>>,
    base: usize,
}

impl<T: Scalar> GaussianQuadrature<T> {
    pub fn new(sigma: T) -> Result<Self> {
        Self::with_nodes(sigma, defaults::QUADRATURE_NODES)
    }

    pub fn with_nodes(sigma: T, base: usize) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(invalid("sigma", "must be positive and finite"));
        }
        if base == 0 || base > defaults::QUADRATURE_MAX_NODES {
            return Err(invalid("nodes", "must be in 1..=512"));
        }
        let mut count = 0;
        let mut nodes = base;
        while nodes <= defaults::QUADRATURE_MAX_NODES {
            count += 1;
            nodes *= 2;
        }
        let levels = (0..count).map(|_| OnceLock::new()).collect();
        Ok(Self {
            sigma,
            tol: T::tol(defaults::QUADRATURE_TOL),
            levels,
            base,
        })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    fn rule(&self, level: usize) -> &QuadratureRule<T> {
        self.levels[level]
            .get_or_init(|| hermite_rule(self.base << level).expect("node counts are validated at construction"))
    }

    /// E[g(Y)], Y ~ N(0, σ²), at a fixed node count (no convergence check).
    pub fn expect_fixed<F: Fn(T) -> T>(&self, g: F, level: usize) -> T {
        let scale = T::SQRT_2() * self.sigma;
        self.rule(level).integrate(|t| g(scale * t)) / T::PI().sqrt()
    }

    /// E[g(Y)], doubling the node count until successive estimates agree.
    pub fn expect<F: Fn(T) -> T>(&self, g: F) -> Result<T> {
        let mut previous = self.expect_fixed(&g, 0);
        let mut difference = T::infinity();
        for level in 1..self.levels.len() {
            let current = self.expect_fixed(&g, level);
            difference = (current - previous).abs();
            if difference <= self.tol {
                return Ok(current);
            }
            previous = current;
        }
        Err(Error::Quadrature {
            nodes: self.base << (self.levels.len() - 1),
            difference: difference.as_f64(),
        })
    }
}
