use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

pub(super) fn validate(transition: &[Vec<f64>], states: &[f64]) -> Result<()> {
    let n = transition.len();
    if n == 0 {
        return Err(invalid("transition", "chain needs at least one state"));
    }
    if states.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: states.len(),
        });
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != n {
            return Err(invalid(
                "transition",
                format!("row {i} has {} entries, expected {n}", row.len()),
            ));
        }
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid(
                "transition",
                format!("row {i} has a negative or non-finite entry"),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid("transition", format!("row {i} sums to {sum}, not 1")));
        }
    }
    if states.iter().any(|s| !s.is_finite()) {
        return Err(invalid("states", "state values must be finite"));
    }
    if !strongly_connected(transition) {
        return Err(invalid("transition", "chain is not irreducible"));
    }
    let d = period(transition);
    if d != 1 {
        return Err(invalid("transition", format!("chain is periodic with period {d}")));
    }
    Ok(())
}

fn reachable_from_zero(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for (v, flag) in seen.iter_mut().enumerate() {
            if !*flag && edge(u, v) {
                *flag = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    reachable_from_zero(n, |u, v| p[u][v] > 0.0) && reachable_from_zero(n, |u, v| p[v][u] > 0.0)
}

/// Period of an irreducible chain: gcd over support edges u→v of level(u) + 1 − level(v),
/// with levels taken from a breadth-first search rooted at state 0.
pub fn period(p: &[Vec<f64>]) -> usize {
    let n = p.len();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[u][v] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[u][v] > 0.0 && level[u] != usize::MAX && level[v] != usize::MAX {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solves πP = π by power iteration (valid for irreducible aperiodic chains).
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..1_000_000 {
        next.fill(0.0);
        for (i, row) in p.iter().enumerate() {
            for (j, &pij) in row.iter().enumerate() {
                next[j] += pi[i] * pij;
            }
        }
        let total: f64 = next.iter().sum();
        let change = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a / total - b).abs())
            .fold(0.0, f64::max);
        for (slot, v) in pi.iter_mut().zip(&next) {
            *slot = v / total;
        }
        if change < 1e-15 {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence {
        method: "stationary distribution",
        iterations: 1_000_000,
        residual: f64::NAN,
    })
}
