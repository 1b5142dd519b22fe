//! Finite-time bounds for on-policy Q-learning with constant stepsize,
//! evaluated from primitive parameters.
//!
//! Mean-square error of the iterates:
//!
//! ```text
//! E||Q_k - Q*||^2 <= 3 ||Q_0 - Q*||^2 (1 - alpha c1)^k + c2 alpha + c3 alpha^2 log^4(c4 / alpha)
//! ```
//!
//! Policy gap of the learning policy:
//!
//! ```text
//! E||Q^{pi_k} - Q*||^2 <= 12 gamma^2/(1-gamma)^2 E||Q_k - Q*||^2
//!                         + 12 eps^2/(1-gamma)^4 + 3 tau^2 log^2|A| / (1-gamma)^2
//! ```

use serde::Serialize;

use crate::chain::ExplorationConstants;
use crate::error::{Error, Result};

/// Absolute constant of the `alpha` variance term.
pub const C2_ABSOLUTE: f64 = 10080.0;
/// Absolute constant of the `alpha^2 log^4` variance term.
pub const C3_ABSOLUTE: f64 = 38400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub lambda: f64,
    pub r_b: usize,
    pub delta_b: f64,
    pub mu_min: f64,
    pub pi_b_min: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sa_count: usize,
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name}={v} outside (0,1]")))
    }
}

pub fn theorem1_constants(
    ec: &ExplorationConstants,
    lambda: f64,
    gamma: f64,
    tau: f64,
    sa_count: usize,
) -> Result<Theorem1Constants> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma={gamma} outside (0,1)")));
    }
    in_unit("lambda", lambda)?;
    in_unit("delta_b", ec.delta)?;
    in_unit("mu_min", ec.mu_min)?;
    in_unit("pi_b_min", ec.pi_b_min)?;
    if !(tau > 0.0 && tau <= 1.0 / (1.0 - gamma)) {
        return Err(Error::InvalidArgument(format!("tau={tau} outside (0, 1/(1-gamma)]")));
    }
    if sa_count < 2 {
        return Err(Error::InvalidArgument(format!("|S||A| = {sa_count} must be at least 2")));
    }
    let (d, mu, pb) = (ec.delta, ec.mu_min, ec.pi_b_min);
    let r1 = (ec.r + 1) as f64;
    // Products of many small factors underflow long before the constants
    // themselves overflow, so every constant is assembled from logarithms.
    let (ll, lmu, ld, lpb, lg) = (lambda.ln(), mu.ln(), d.ln(), pb.ln(), (1.0 - gamma).ln());
    let r = ec.r as f64;
    let c1 = (0.5f64.ln() + r * ll + lmu + ld + lg).exp();
    let c2 = ((C2_ABSOLUTE * r1 * (sa_count as f64).ln()).ln()
        - ((3.0 * r + 1.0) * ll + lpb + 3.0 * lmu + 3.0 * ld + 4.0 * lg))
        .exp();
    let c3 = ((C3_ABSOLUTE * r1.powi(4)).ln()
        - (2.0 * tau.ln() + (6.0 * r + 4.0) * ll + 6.0 * lmu + 4.0 * lpb + 6.0 * ld + 6.0 * lg))
        .exp();
    let c4 = ((4.0 * r1).ln() - (ld + (r + 1.0) * ll + lmu + lpb)).exp();
    Ok(Theorem1Constants {
        c1,
        c2,
        c3,
        c4,
        lambda,
        r_b: ec.r,
        delta_b: d,
        mu_min: mu,
        pi_b_min: pb,
        gamma,
        tau,
        sa_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Curve {
    pub values: Vec<f64>,
    pub variance_floor: f64,
    /// Set when `c4 / alpha <= 1` and the log factor was clamped to zero.
    pub log_clamped: bool,
}

/// `3 q0_gap^2 (1 - alpha c1)^k + c2 alpha + c3 alpha^2 log^4(c4 / alpha)`
/// for every `k` in `k_list`.
pub fn theorem1_curve(consts: &Theorem1Constants, alpha: f64, q0_gap: f64, k_list: &[usize]) -> Result<Theorem1Curve> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha={alpha} must be positive")));
    }
    if alpha >= 1.0 / consts.c1 {
        return Err(Error::StepSize { alpha, limit: 1.0 / consts.c1 });
    }
    let ratio = consts.c4 / alpha;
    let log_clamped = ratio <= 1.0;
    let log = if log_clamped { 0.0 } else { ratio.ln() };
    let variance_floor = consts.c2 * alpha + consts.c3 * alpha * alpha * log.powi(4);
    let decay = 1.0 - alpha * consts.c1;
    let bias = 3.0 * q0_gap * q0_gap;
    let values = k_list
        .iter()
        .map(|&k| bias * (k as f64 * decay.ln()).exp() + variance_floor)
        .collect();
    Ok(Theorem1Curve { values, variance_floor, log_clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complexity {
    /// Iterations needed: a whole number, kept as `f64` because realistic
    /// constants push it far past any integer type.
    pub iterations: f64,
    pub alpha: f64,
}

/// Iterations for `E||Q_k - Q*||_inf <= xi` with the stepsize
/// `alpha = min(xi^2 / (3 c2), xi / sqrt(3 c3))`, i.e.
/// `ceil(2 log(3 q0_gap / xi) / (c1 alpha))`.
///
/// With `include_log_factor` the stepsize instead satisfies
/// `c3 alpha^2 log^4(c4/alpha) <= xi^2/3` exactly (found by bisection).
pub fn corollary1_complexity(
    consts: &Theorem1Constants,
    xi: f64,
    q0_gap: f64,
    include_log_factor: bool,
) -> Result<Complexity> {
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!("xi={xi} must be positive")));
    }
    let target = xi * xi / 3.0;
    let alpha_c2 = target / consts.c2;
    let mut alpha = alpha_c2.min(xi / (3.0 * consts.c3).sqrt());
    if include_log_factor {
        alpha = log_aware_alpha(consts, alpha_c2, target);
    }
    let log_term = (3.0 * q0_gap / xi).ln();
    if !(log_term > 0.0) {
        return Ok(Complexity { iterations: 0.0, alpha });
    }
    let iterations = (2.0 * log_term / (consts.c1 * alpha)).ceil();
    Ok(Complexity { iterations, alpha })
}

// Largest alpha <= min(alpha_c2, c4 / e^2) with c3 alpha^2 log^4(c4/alpha) <= target.
// On that interval the left side increases with alpha.
fn log_aware_alpha(consts: &Theorem1Constants, alpha_c2: f64, target: f64) -> f64 {
    let variance = |a: f64| consts.c3 * a * a * (consts.c4 / a).ln().powi(4);
    let hi_limit = alpha_c2.min(consts.c4 * (-2.0f64).exp());
    if variance(hi_limit) <= target {
        return hi_limit;
    }
    let (mut lo, mut hi) = (0.0, hi_limit);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid > 0.0 && variance(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Decomposition {
    /// `12 gamma^2 / (1 - gamma)^2`.
    pub t1_coeff: f64,
    /// `12 eps^2 / (1 - gamma)^4 + 3 tau^2 log^2|A| / (1 - gamma)^2`.
    pub t2: f64,
}

impl Theorem2Decomposition {
    pub fn new(gamma: f64, epsilon: f64, tau: f64, n_actions: usize) -> Self {
        let g = 1.0 - gamma;
        let log_a = (n_actions as f64).ln();
        Theorem2Decomposition {
            t1_coeff: 12.0 * gamma * gamma / (g * g),
            t2: 12.0 * epsilon * epsilon / g.powi(4) + 3.0 * tau * tau * log_a * log_a / (g * g),
        }
    }

    pub fn bound(&self, q_gap_sq: f64) -> f64 {
        self.t1_coeff * q_gap_sq + self.t2
    }
}

pub fn theorem2_bound(gamma: f64, epsilon: f64, tau: f64, n_actions: usize, q_gap_sq: f64) -> f64 {
    Theorem2Decomposition::new(gamma, epsilon, tau, n_actions).bound(q_gap_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    /// Fraction of indices where `bound >= empirical`.
    pub fraction: f64,
    /// `min_i (bound_i - empirical_i)`; negative when the bound is violated.
    pub worst_margin: f64,
    pub count: usize,
}

pub fn bound_vs_empirical(bound: &[f64], empirical: &[f64]) -> Result<DominanceReport> {
    if bound.len() != empirical.len() {
        return Err(Error::Dimension(format!(
            "bound has {} points, empirical has {}",
            bound.len(),
            empirical.len()
        )));
    }
    if bound.is_empty() {
        return Err(Error::InvalidArgument("no overlapping points".into()));
    }
    let held = bound.iter().zip(empirical).filter(|(b, e)| b >= e).count();
    let worst_margin = bound.iter().zip(empirical).map(|(b, e)| b - e).fold(f64::INFINITY, f64::min);
    Ok(DominanceReport { fraction: held as f64 / bound.len() as f64, worst_margin, count: bound.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn halves() -> ExplorationConstants {
        ExplorationConstants { r: 1, delta: 0.5, mu_min: 0.5, pi_b_min: 0.5 }
    }

    #[test]
    fn constants_formula_evaluation() {
        let c = theorem1_constants(&halves(), 0.5, 0.5, 1.0, 4).unwrap();
        assert_relative_eq!(c.c1, 0.03125, max_relative = 1e-15);
        assert_relative_eq!(c.c4, 256.0, max_relative = 1e-15);
        // c2 = 10080 * 2 * ln 4 / (0.5^4 * 0.5 * 0.5^3 * 0.5^3 * 0.5^4)
        assert_relative_eq!(c.c2, 10080.0 * 2.0 * 4f64.ln() * 2f64.powi(15), max_relative = 1e-14);
        // c3 = 38400 * 16 / (1 * 0.5^10 * 0.5^6 * 0.5^4 * 0.5^6 * 0.5^6)
        assert_relative_eq!(c.c3, 38400.0 * 16.0 * 2f64.powi(32), max_relative = 1e-14);
    }

    #[test]
    fn constants_limit_and_monotonicity() {
        let ones = ExplorationConstants { r: 1, delta: 1.0, mu_min: 1.0, pi_b_min: 1.0 };
        let c = theorem1_constants(&ones, 1.0, 1e-12, 1.0, 4).unwrap();
        assert_relative_eq!(c.c1, 0.5, max_relative = 1e-9);

        let full = theorem1_constants(&halves(), 0.5, 0.5, 1.0, 4).unwrap();
        let half = theorem1_constants(&halves(), 0.25, 0.5, 1.0, 4).unwrap();
        assert!(half.c1 < full.c1);
        assert!(half.c2 > full.c2 && half.c3 > full.c3 && half.c4 > full.c4);
    }

    #[test]
    fn constants_reject_bad_ranges() {
        assert!(theorem1_constants(&halves(), 0.0, 0.5, 1.0, 4).is_err());
        assert!(theorem1_constants(&halves(), 0.5, 0.5, 2.5, 4).is_err());
        assert!(theorem1_constants(&halves(), 0.5, 1.0, 1.0, 4).is_err());
        assert!(theorem1_constants(&ExplorationConstants { pi_b_min: 0.0, ..halves() }, 0.5, 0.5, 1.0, 4).is_err());
        assert!(theorem1_constants(&halves(), 0.5, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn curve_shape() {
        let c = theorem1_constants(&halves(), 0.5, 0.5, 1.0, 4).unwrap();
        let alpha = 0.01;
        let curve = theorem1_curve(&c, alpha, 2.0, &[0, 1, 10, 1_000_000_000]).unwrap();
        assert_relative_eq!(curve.values[0], 12.0 + curve.variance_floor, max_relative = 1e-15);
        assert!(curve.values.windows(2).all(|w| w[0] >= w[1]));
        assert_relative_eq!(curve.values[3], curve.variance_floor, max_relative = 1e-12);
        assert!(!curve.log_clamped);
        assert!(matches!(theorem1_curve(&c, 1.0 / c.c1, 2.0, &[0]), Err(Error::StepSize { .. })));
    }

    #[test]
    fn log_factor_clamped_when_alpha_exceeds_c4() {
        let ones = ExplorationConstants { r: 1, delta: 1.0, mu_min: 1.0, pi_b_min: 1.0 };
        let c = theorem1_constants(&ones, 1.0, 0.99, 1.0, 4).unwrap();
        assert!(c.c4 < 1.0 / c.c1);
        let curve = theorem1_curve(&c, 0.5 * (c.c4 + 1.0 / c.c1), 1.0, &[0]).unwrap();
        assert!(curve.log_clamped);
        assert_eq!(curve.variance_floor, c.c2 * 0.5 * (c.c4 + 1.0 / c.c1));
    }

    #[test]
    fn complexity_scaling() {
        let c = theorem1_constants(&halves(), 0.5, 0.5, 1.0, 4).unwrap();
        assert_eq!(corollary1_complexity(&c, 6.0, 2.0, false).unwrap().iterations, 0.0);
        let a = corollary1_complexity(&c, 0.5, 10.0, false).unwrap();
        let b = corollary1_complexity(&c, 0.25, 10.0, false).unwrap();
        assert!(b.iterations > 2.0 * a.iterations);

        // xi^2 branch scales linearly in c2
        let mut c2x = c;
        c2x.c2 *= 2.0;
        c2x.c3 = 0.0;
        let mut base = c;
        base.c3 = 0.0;
        let k1 = corollary1_complexity(&base, 0.5, 10.0, false).unwrap();
        let k2 = corollary1_complexity(&c2x, 0.5, 10.0, false).unwrap();
        let ratio = k2.iterations / k1.iterations;
        assert!((ratio - 2.0).abs() < 1e-6);
    }

    #[test]
    fn complexity_with_log_factor_is_slower() {
        let c = theorem1_constants(&halves(), 0.5, 0.5, 1.0, 4).unwrap();
        let plain = corollary1_complexity(&c, 0.1, 10.0, false).unwrap();
        let logged = corollary1_complexity(&c, 0.1, 10.0, true).unwrap();
        assert!(logged.alpha < plain.alpha);
        assert!(logged.iterations > plain.iterations);
        let a = logged.alpha;
        let v = c.c3 * a * a * (c.c4 / a).ln().powi(4);
        assert!(v <= 0.01 / 3.0 * (1.0 + 1e-9));
    }

    #[test]
    fn theorem2_cases() {
        assert_eq!(theorem2_bound(0.5, 0.0, 0.0, 4, 0.0), 0.0);
        assert_eq!(theorem2_bound(0.5, 0.0, 3.0, 1, 0.0), 0.0);
        let ln2 = 2f64.ln();
        let expect = 12.0 + 12.0 * 0.01 / 0.0625 + 3.0 * 0.01 * ln2 * ln2 / 0.25;
        assert_relative_eq!(theorem2_bound(0.5, 0.1, 0.1, 2, 1.0), expect, max_relative = 1e-15);
        assert_relative_eq!(expect, 12.0 + 1.92 + 0.0576, max_relative = 1e-3);
    }

    #[test]
    fn dominance_report() {
        let e = [1.0, 2.0, 3.0];
        let b: Vec<f64> = e.iter().map(|v| v + 1.0).collect();
        let r = bound_vs_empirical(&b, &e).unwrap();
        assert_eq!((r.fraction, r.worst_margin), (1.0, 1.0));
        let r = bound_vs_empirical(&[1.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!((r.fraction, r.worst_margin), (0.5, -1.0));
        assert!(bound_vs_empirical(&[], &[]).is_err());
        assert!(bound_vs_empirical(&[1.0], &[]).is_err());
    }
}
