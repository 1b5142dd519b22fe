//! Finite Markov chains over states or state-action pairs.
//!
//! The joint chain lives on `Y = S x A` with pair `(s, a)` at index
//! `s * |A| + a`, the same layout as [`crate::mdp::QFunction`].

mod mixing;
mod operators;
mod poisson;

pub use mixing::{
    certified_mixing, check_certificate, combine_certificates, empirical_mixing, lazy_joint,
    stationary_sensitivity, tv_profile, CertificateCheck, CertificateKind, KCheck,
    MixingCertificate, SensitivityComparison, EMPIRICAL_TV_FLOOR,
};
pub use operators::{f_sample, fbar, noise_conditional_mean, noise_sample};
pub use poisson::{
    center, poisson_bound_check, poisson_direct, poisson_residual, poisson_series,
    series_budget, PoissonSolution, DEFAULT_SERIES_TOL,
};

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp, ROW_SUM_TOL};

/// Row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(DMatrix<f64>);

impl StochasticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!("{}x{} is not a square matrix", m.nrows(), m.ncols())));
        }
        for i in 0..m.nrows() {
            let row = m.row(i);
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {i} sums to {sum}")));
            }
        }
        Ok(StochasticMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        StochasticMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Product of two stochastic matrices. Renormalisation is skipped, so
    /// row sums drift only by rounding.
    pub fn mul(&self, other: &StochasticMatrix) -> StochasticMatrix {
        StochasticMatrix(&self.0 * &other.0)
    }
}

/// `P(s, s') = sum_a p(s'|s,a) pi(a|s)`.
pub fn state_chain(mdp: &TabularMdp, policy: &Policy) -> Result<StochasticMatrix> {
    check_dims(mdp, policy)?;
    let n = mdp.n_states;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy.get(s, a);
            if w == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                m[(s, s2)] += w * p;
            }
        }
    }
    Ok(StochasticMatrix(m))
}

/// `Pbar((s,a),(s',a')) = p(s'|s,a) pi(a'|s')` over state-action pairs.
pub fn joint_chain(mdp: &TabularMdp, policy: &Policy) -> Result<StochasticMatrix> {
    check_dims(mdp, policy)?;
    let na = mdp.n_actions;
    let n = mdp.sa_count();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for s in 0..mdp.n_states {
        for a in 0..na {
            let i = mdp.sa(s, a);
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a2, &pi) in policy.row(s2).iter().enumerate() {
                    m[(i, s2 * na + a2)] = p * pi;
                }
            }
        }
    }
    Ok(StochasticMatrix(m))
}

fn check_dims(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    if mdp.n_states != policy.n_states || mdp.n_actions != policy.n_actions {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states, policy.n_actions, mdp.n_states, mdp.n_actions
        )));
    }
    Ok(())
}

/// Lazy chain `(P + I) / 2`.
pub fn lazy(p: &StochasticMatrix) -> StochasticMatrix {
    let n = p.dim();
    StochasticMatrix((&p.0 + DMatrix::<f64>::identity(n, n)) * 0.5)
}

/// Strong connectivity of the graph of positive entries.
pub fn is_irreducible(p: &StochasticMatrix) -> bool {
    let n = p.dim();
    let reach_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let w = if forward { p.get(i, j) } else { p.get(j, i) };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    };
    reach_all(true) && reach_all(false)
}

/// Probability vector `mu` with `mu^T P = mu^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub weights: Vec<f64>,
    pub min_weight: f64,
}

impl StationaryDistribution {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let min_weight = weights.iter().copied().fold(f64::INFINITY, f64::min);
        StationaryDistribution { weights, min_weight }
    }

    /// `mu^T y`.
    pub fn expectation(&self, y: &[f64]) -> f64 {
        self.weights.iter().zip(y).map(|(m, v)| m * v).sum()
    }

    /// `||mu^T P - mu^T||_1`.
    pub fn residual(&self, p: &StochasticMatrix) -> f64 {
        let mu = DVector::from_column_slice(&self.weights);
        let next = p.0.tr_mul(&mu);
        (next - mu).iter().map(|v| v.abs()).sum()
    }
}

pub const DEFAULT_STATIONARY_TOL: f64 = 1e-13;
pub const STATIONARY_MAX_ITER: usize = 2_000_000;
/// Largest accepted `||mu^T P - mu^T||_1` after power iteration.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-9;

/// Stationary distribution of an irreducible chain by power iteration on
/// its lazy version, stopping once successive iterates differ by less than
/// `tol` in l1.
pub fn stationary(p: &StochasticMatrix, tol: f64) -> Result<StationaryDistribution> {
    if !is_irreducible(p) {
        return Err(Error::Reducible);
    }
    let n = p.dim();
    let lazy_t = lazy(p).0.transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    let mut step = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        lazy_t.mul_to(&mu, &mut next);
        let total: f64 = next.iter().sum();
        next /= total;
        step = next.iter().zip(mu.iter()).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mu, &mut next);
        if step < tol {
            let dist = StationaryDistribution::from_weights(mu.as_slice().to_vec());
            if dist.residual(p) <= STATIONARY_RESIDUAL_TOL {
                return Ok(dist);
            }
            break;
        }
    }
    Err(Error::StationaryNotConverged { iterations: STATIONARY_MAX_ITER, step })
}

/// Exploration constants of a reference policy `pi_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConstants {
    /// Smallest power with an entrywise positive lazy state chain.
    pub r: usize,
    /// Minimum entry of that power.
    pub delta: f64,
    /// `min_s mu_{pi_b}(s)`.
    pub mu_min: f64,
    /// `min_{s,a} pi_b(a|s)`.
    pub pi_b_min: f64,
}

pub fn exploration_constants(mdp: &TabularMdp, pi_b: &Policy) -> Result<ExplorationConstants> {
    let p = state_chain(mdp, pi_b)?;
    if !is_irreducible(&p) {
        return Err(Error::Reducible);
    }
    let mu = stationary(&p, DEFAULT_STATIONARY_TOL)?;
    let l = lazy(&p);
    let mut power = l.clone();
    // an irreducible lazy chain on n states is positive by power n - 1
    for r in 1..=p.dim().max(1) {
        let delta = power.min_entry();
        if delta > 0.0 {
            return Ok(ExplorationConstants {
                r,
                delta,
                mu_min: mu.min_weight,
                pi_b_min: pi_b.min_prob(),
            });
        }
        power = power.mul(&l);
    }
    Err(Error::Reducible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::build_cyclic_mdp;
    use approx::assert_abs_diff_eq;

    #[test]
    fn state_chain_on_cyclic() {
        let mdp = build_cyclic_mdp(5, 10, 0.9).unwrap();
        let mv = Policy::deterministic(10, &[9; 5]).unwrap();
        let p = state_chain(&mdp, &mv).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(p.get(i, j), if j == (i + 1) % 5 { 1.0 } else { 0.0 });
            }
        }
        let stay = Policy::deterministic(10, &[0; 5]).unwrap();
        assert_eq!(state_chain(&mdp, &stay).unwrap(), StochasticMatrix::identity(5));

        let p = state_chain(&mdp, &Policy::uniform(5, 10)).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(p.get(i, i), 0.9, epsilon = 1e-14);
            assert_abs_diff_eq!(p.get(i, (i + 1) % 5), 0.1, epsilon = 1e-14);
        }
        assert!(is_irreducible(&p));
    }

    #[test]
    fn joint_chain_structure() {
        let mdp = build_cyclic_mdp(3, 2, 0.9).unwrap();
        let det = Policy::deterministic(2, &[1, 0, 1]).unwrap();
        let j = joint_chain(&mdp, &det).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = (0..6).map(|c| j.get(i, c)).collect();
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
        let j = joint_chain(&mdp, &Policy::uniform(3, 2)).unwrap();
        for i in 0..6 {
            let nz: Vec<f64> = (0..6).map(|c| j.get(i, c)).filter(|&v| v > 0.0).collect();
            assert_eq!(nz, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn lazy_examples() {
        assert_eq!(lazy(&StochasticMatrix::identity(3)), StochasticMatrix::identity(3));
        let swap = StochasticMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let l = lazy(&swap);
        assert!(l.matrix().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn irreducibility() {
        let cycle = StochasticMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(is_irreducible(&cycle));
        assert!(!is_irreducible(&StochasticMatrix::identity(2)));
        assert!(is_irreducible(&StochasticMatrix::identity(1)));
        let one_way = StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(!is_irreducible(&one_way));
    }

    #[test]
    fn stationary_examples() {
        let ds = StochasticMatrix::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.5, 0.1, 0.4],
            vec![0.3, 0.4, 0.3],
        ])
        .unwrap();
        let mu = stationary(&ds, DEFAULT_STATIONARY_TOL).unwrap();
        for w in &mu.weights {
            assert_abs_diff_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }

        let n = 20;
        let cycle = StochasticMatrix::new(DMatrix::from_fn(n, n, |i, j| {
            if j == (i + 1) % n { 1.0 } else { 0.0 }
        }))
        .unwrap();
        let mu = stationary(&cycle, DEFAULT_STATIONARY_TOL).unwrap();
        for w in &mu.weights {
            assert_abs_diff_eq!(*w, 0.05, epsilon = 1e-10);
        }
        assert!(mu.residual(&cycle) <= 1e-9);

        assert_eq!(stationary(&StochasticMatrix::identity(2), 1e-12), Err(Error::Reducible));
    }

    #[test]
    fn exploration_constants_examples() {
        let swap = build_cyclic_mdp(2, 2, 0.5).unwrap();
        let mv = Policy::deterministic(2, &[1, 1]).unwrap();
        let ec = exploration_constants(&swap, &mv).unwrap();
        assert_eq!(ec.r, 1);
        assert_eq!(ec.delta, 0.5);
        assert_abs_diff_eq!(ec.mu_min, 0.5, epsilon = 1e-12);
        assert_eq!(ec.pi_b_min, 0.0);

        let stay = Policy::deterministic(2, &[0, 0]).unwrap();
        assert_eq!(exploration_constants(&swap, &stay), Err(Error::Reducible));
    }

    #[test]
    fn exploration_constants_match_matrix_powers() {
        let mdp = build_cyclic_mdp(4, 2, 0.9).unwrap();
        let mv = Policy::deterministic(2, &[1; 4]).unwrap();
        let ec = exploration_constants(&mdp, &mv).unwrap();
        // oracle: explicit powers of (P + I) / 2 for the 4-cycle
        let p = DMatrix::from_fn(4, 4, |i, j| if j == (i + 1) % 4 { 1.0 } else { 0.0 });
        let l = (p + DMatrix::<f64>::identity(4, 4)) * 0.5;
        let mut power = l.clone();
        let mut r = 1;
        while power.min() <= 0.0 {
            power = &power * &l;
            r += 1;
        }
        assert_eq!(ec.r, r);
        assert_eq!(ec.r, 3);
        assert_abs_diff_eq!(ec.delta, power.min(), epsilon = 1e-15);
        assert_abs_diff_eq!(ec.delta, 0.125, epsilon = 1e-15);
    }
}
