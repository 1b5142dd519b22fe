use nalgebra::DMatrix;
use serde::Serialize;

use super::{joint_chain, lazy, stationary, ExplorationConstants, StationaryDistribution, StochasticMatrix, DEFAULT_STATIONARY_TOL};
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

/// Distances at or below this level are treated as fully mixed when fitting.
pub const EMPIRICAL_TV_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Empirical,
    Certified,
}

/// Mixing parameters: `max_i ||P^k(i,.) - mu||_TV <= c * rho^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingCertificate {
    pub c: f64,
    pub rho: f64,
    pub kind: CertificateKind,
}

impl MixingCertificate {
    pub fn bound(&self, k: usize) -> f64 {
        self.c * self.rho.powi(k as i32)
    }
}

/// Worst-row total variation `d(k) = max_i ||P^k(i,.) - mu||_TV` for
/// `k = 0..=k_max`, with TV taken as half the l1 distance.
///
/// `mu` must be stationary for `p`. The powers are taken of the deflated
/// matrix `P - 1 mu^T`, using `P^k - 1 mu^T = (P - 1 mu^T)^k` for `k >= 1`,
/// so small distances keep their relative accuracy instead of bottoming out
/// at rounding noise.
pub fn tv_profile(p: &StochasticMatrix, mu: &StationaryDistribution, k_max: usize) -> Vec<f64> {
    let n = p.dim();
    let projector = DMatrix::from_fn(n, n, |_, j| mu.weights[j]);
    let deflated = p.matrix() - &projector;
    let worst = |m: &DMatrix<f64>| {
        m.row_iter()
            .map(|row| 0.5 * row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
    };
    let mut out = Vec::with_capacity(k_max + 1);
    let mut power = DMatrix::<f64>::identity(n, n) - projector;
    out.push(worst(&power));
    for _ in 0..k_max {
        power = &power * &deflated;
        out.push(worst(&power));
    }
    out
}

/// `d <= c * rho^k`, compared in log space so an underflowing bound does not
/// reject a distance that underflows with it.
fn dominated(distance: f64, cert: &MixingCertificate, k: usize) -> bool {
    distance <= cert.bound(k) || distance.ln() <= cert.c.ln() + k as f64 * cert.rho.ln()
}

/// Fits `(c, rho)` to the observed TV decay of a lazy chain.
///
/// `rho` comes from a least-squares line through `log d(k)` over the tail
/// half of the steps still above [`EMPIRICAL_TV_FLOOR`]; `c` is then the
/// smallest constant (at least 1) dominating every observed `d(k)`, so the
/// certificate holds for every `k <= k_max` by construction.
pub fn empirical_mixing(
    p_lazy: &StochasticMatrix,
    mu: &StationaryDistribution,
    k_max: usize,
) -> Result<MixingCertificate> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be positive".into()));
    }
    let d = tv_profile(p_lazy, mu, k_max);
    let above: Vec<(f64, f64)> = (1..=k_max)
        .filter(|&k| d[k] > EMPIRICAL_TV_FLOOR)
        .map(|k| (k as f64, d[k].ln()))
        .collect();
    if above.is_empty() {
        return Ok(MixingCertificate { c: 1.0, rho: 0.5, kind: CertificateKind::Empirical });
    }
    let rho = if above.len() < 2 {
        0.5
    } else {
        let tail = &above[above.len() / 2..];
        let tail = if tail.len() < 2 { &above[..] } else { tail };
        let slope = least_squares_slope(tail);
        if !(slope < 0.0) || !slope.is_finite() {
            return Err(Error::FitDegenerate(format!("log-TV slope {slope} is not negative")));
        }
        slope.exp()
    };
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::FitDegenerate(format!("fitted rho {rho} outside (0,1)")));
    }
    let log_rho = rho.ln();
    let log_ratio = d
        .iter()
        .enumerate()
        .filter(|(_, &dk)| dk > 0.0)
        .map(|(k, &dk)| dk.ln() - k as f64 * log_rho)
        .fold(0.0_f64, f64::max);
    let ratio = log_ratio.exp();
    if !ratio.is_finite() {
        return Err(Error::FitDegenerate(format!("c overflows for rho {rho} over k_max={k_max}")));
    }
    // one part in 1e12 absorbs rounding in c * rho^k
    Ok(MixingCertificate { c: ratio * (1.0 + 1e-12), rho, kind: CertificateKind::Empirical })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mixing parameters of the lazy joint chain of any policy whose smallest
/// action probability is `pi_min`, derived from the exploration constants
/// of a reference policy.
pub fn certified_mixing(pi_min: f64, ec: &ExplorationConstants) -> Result<MixingCertificate> {
    for (name, v) in [
        ("pi_min", pi_min),
        ("delta", ec.delta),
        ("mu_min", ec.mu_min),
        ("pi_b_min", ec.pi_b_min),
    ] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidArgument(format!("{name}={v} outside (0,1]")));
        }
    }
    let r1 = (ec.r + 1) as i32;
    let inner = 0.5 * ec.delta * pi_min.powi(r1) * ec.mu_min * ec.pi_b_min;
    let base = 1.0 - inner;
    Ok(MixingCertificate {
        c: 1.0 / base,
        rho: base.powf(1.0 / r1 as f64),
        kind: CertificateKind::Certified,
    })
}

/// Conservative merge: the larger `c` and the larger `rho`.
pub fn combine_certificates(a: &MixingCertificate, b: &MixingCertificate) -> MixingCertificate {
    MixingCertificate {
        c: a.c.max(b.c),
        rho: a.rho.max(b.rho),
        kind: if a.kind == b.kind { a.kind } else { CertificateKind::Certified },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KCheck {
    pub k: usize,
    pub distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Per-step verdicts of a certificate against directly computed distances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateCheck {
    pub certificate: MixingCertificate,
    pub checks: Vec<KCheck>,
}

impl CertificateCheck {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }
}

/// Checks `d(k) <= c * rho^k` for `k = 0..=k_max` by explicit matrix powers.
pub fn check_certificate(
    p_lazy: &StochasticMatrix,
    mu: &StationaryDistribution,
    cert: &MixingCertificate,
    k_max: usize,
) -> CertificateCheck {
    let checks = tv_profile(p_lazy, mu, k_max)
        .into_iter()
        .enumerate()
        .map(|(k, distance)| {
            KCheck { k, distance, bound: cert.bound(k), pass: dominated(distance, cert, k) }
        })
        .collect();
    CertificateCheck { certificate: *cert, checks }
}

/// Both sides of the stationary-distribution Lipschitz bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityComparison {
    /// `||mubar_1 - mubar_2||_1`.
    pub lhs: f64,
    /// `2 (log(g / 4c) / log rho) g` with `g = ||pi1 - pi2||_inf`.
    pub rhs: f64,
    pub policy_gap: f64,
}

impl SensitivityComparison {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Compares `||mubar_{pi1} - mubar_{pi2}||_1` with its Lipschitz-type bound,
/// using `cert` as the lazy joint-chain mixing parameters. Pass the
/// certificate of `pi1`'s chain, or [`combine_certificates`] of both.
pub fn stationary_sensitivity(
    mdp: &TabularMdp,
    p1: &Policy,
    p2: &Policy,
    cert: &MixingCertificate,
) -> Result<SensitivityComparison> {
    let mu1 = stationary(&joint_chain(mdp, p1)?, DEFAULT_STATIONARY_TOL)?;
    let mu2 = stationary(&joint_chain(mdp, p2)?, DEFAULT_STATIONARY_TOL)?;
    let lhs: f64 = mu1.weights.iter().zip(&mu2.weights).map(|(a, b)| (a - b).abs()).sum();
    let gap = p1.distance(p2);
    let log_rho = cert.rho.ln();
    let rhs = if gap == 0.0 || !(log_rho < 0.0) {
        f64::INFINITY
    } else {
        2.0 * ((gap / (4.0 * cert.c)).ln() / log_rho) * gap
    };
    Ok(SensitivityComparison { lhs, rhs, policy_gap: gap })
}

/// Lazy joint chain of `policy` together with its stationary distribution.
pub fn lazy_joint(
    mdp: &TabularMdp,
    policy: &Policy,
) -> Result<(StochasticMatrix, StationaryDistribution)> {
    let joint = joint_chain(mdp, policy)?;
    let mu = stationary(&joint, DEFAULT_STATIONARY_TOL)?;
    Ok((lazy(&joint), mu))
}
