//! Poisson equation `(I - P) x = y - (mu^T y) 1` for irreducible chains.
//!
//! Both solvers return the representative with `mu^T x = 0`.

use nalgebra::{DMatrix, DVector};

use super::{is_irreducible, lazy, MixingCertificate, StationaryDistribution, StochasticMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
const SERIES_BUDGET_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub x: Vec<f64>,
    /// `||(I - P) x - centered_rhs||_inf`.
    pub residual_norm: f64,
    pub centered_rhs: Vec<f64>,
    /// Number of series terms summed (zero for the direct solver).
    pub terms: usize,
}

/// `y - (mu^T y) 1`.
pub fn center(mu: &StationaryDistribution, y: &[f64]) -> Vec<f64> {
    let mean = mu.expectation(y);
    y.iter().map(|v| v - mean).collect()
}

pub fn poisson_residual(p: &StochasticMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let px = p.matrix() * &xv;
    (0..x.len())
        .map(|i| (x[i] - px[i] - rhs[i]).abs())
        .fold(0.0_f64, f64::max)
}

fn check_inputs(p: &StochasticMatrix, mu: &StationaryDistribution, y: &[f64]) -> Result<()> {
    if mu.weights.len() != p.dim() || y.len() != p.dim() {
        return Err(Error::Dimension(format!(
            "chain has {} states, mu has {}, y has {}",
            p.dim(),
            mu.weights.len(),
            y.len()
        )));
    }
    if !is_irreducible(p) {
        return Err(Error::Reducible);
    }
    Ok(())
}

/// Series budget `ceil(50 (r_b + 1) / (1 - rho))`, capped at one million.
pub fn series_budget(r_b: usize, rho: f64) -> usize {
    if !(rho < 1.0) {
        return SERIES_BUDGET_CAP;
    }
    let k = (50.0 * (r_b as f64 + 1.0) / (1.0 - rho)).ceil();
    if k.is_finite() { (k as usize).min(SERIES_BUDGET_CAP) } else { SERIES_BUDGET_CAP }
}

/// `x = 1/2 sum_k Lazy(P)^k ytilde`, truncated once a term drops below `tol`
/// in sup norm or after `k_max` terms.
pub fn poisson_series(
    p: &StochasticMatrix,
    mu: &StationaryDistribution,
    y: &[f64],
    tol: f64,
    k_max: usize,
) -> Result<PoissonSolution> {
    check_inputs(p, mu, y)?;
    let centered = center(mu, y);
    let l = lazy(p);
    let mut term = DVector::from_column_slice(&centered) * 0.5;
    let mut x = DVector::<f64>::zeros(p.dim());
    let mut next = DVector::<f64>::zeros(p.dim());
    let mut terms = 0;
    let mut converged = false;
    while terms <= k_max {
        x += &term;
        terms += 1;
        if term.amax() < tol {
            converged = true;
            break;
        }
        l.matrix().mul_to(&term, &mut next);
        std::mem::swap(&mut term, &mut next);
    }
    let x = x.as_slice().to_vec();
    let residual_norm = poisson_residual(p, &x, &centered);
    if !converged && residual_norm > 100.0 * tol {
        return Err(Error::SeriesNotConverged { k_max, residual: residual_norm });
    }
    Ok(PoissonSolution { x, residual_norm, centered_rhs: centered, terms })
}

/// Direct solve of `(I - P) x = ytilde` with the last (redundant) equation
/// replaced by `mu^T x = 0`.
pub fn poisson_direct(
    p: &StochasticMatrix,
    mu: &StationaryDistribution,
    y: &[f64],
) -> Result<PoissonSolution> {
    check_inputs(p, mu, y)?;
    let n = p.dim();
    let centered = center(mu, y);
    let mut a = DMatrix::<f64>::identity(n, n) - p.matrix();
    let mut b = DVector::from_column_slice(&centered);
    for j in 0..n {
        a[(n - 1, j)] = mu.weights[j];
    }
    b[n - 1] = 0.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("augmented Poisson system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("augmented Poisson system".into()));
    }
    let x = sol.as_slice().to_vec();
    let residual_norm = poisson_residual(p, &x, &centered);
    Ok(PoissonSolution { x, residual_norm, centered_rhs: centered, terms: 0 })
}

/// `||x||_inf <= c / (1 - rho) ||ytilde||_inf + 1e-9`.
pub fn poisson_bound_check(sol: &PoissonSolution, cert: &MixingCertificate) -> bool {
    let x_norm = sol.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let y_norm = sol.centered_rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(cert.rho < 1.0) {
        return true;
    }
    x_norm <= cert.c / (1.0 - cert.rho) * y_norm + 1e-9
}
