//! Computations behind each subcommand, kept separate from file output so
//! the acceptance suite can reuse them.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qlab::bounds::{
    bound_vs_empirical, corollary1_complexity, theorem1_constants, theorem1_curve, Complexity, DominanceReport,
    Theorem1Constants, Theorem1Curve, Theorem2Decomposition,
};
use qlab::chain::{
    certified_mixing, check_certificate, empirical_mixing, exploration_constants, is_irreducible, joint_chain,
    lazy, poisson_bound_check, poisson_direct, poisson_series, series_budget, state_chain, stationary,
    CertificateCheck, ExplorationConstants, MixingCertificate, StationaryDistribution, DEFAULT_SERIES_TOL,
    DEFAULT_STATIONARY_TOL,
};
use qlab::mdp::{
    build_cyclic_mdp, greedy_policy, mixture_softmax, policy_q, solve_optimal, ExplorationParams, Policy,
    QFunction, TabularMdp,
};
use qlab::qlearn::{ensemble_run, Ensemble, LearnerConfig, LearnerMode, Schedule};

use crate::config::{ExperimentConfig, InitialQ, MdpSource, PolicySpec};

pub fn load_mdp(source: &MdpSource) -> Result<TabularMdp> {
    match source {
        MdpSource::Cyclic { n_states, n_actions, discount } => Ok(build_cyclic_mdp(*n_states, *n_actions, *discount)?),
        MdpSource::File { path } => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading MDP {}", path.display()))?;
            Ok(TabularMdp::from_json(&text)?.validated()?)
        }
    }
}

pub fn initial_q(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Result<QFunction> {
    match cfg.initial_q {
        InitialQ::Constant { value } => Ok(QFunction::constant(mdp.n_states, mdp.n_actions, value)),
        InitialQ::StayMove { stay, r#move } => {
            if !matches!(cfg.mdp, MdpSource::Cyclic { .. }) {
                bail!("stay/move initialisation needs the cyclic MDP; pass --q0 for other MDPs");
            }
            let bound = 1.0 / (1.0 - mdp.discount);
            if stay.abs().max(r#move.abs()) > bound * (1.0 + 1e-12) {
                bail!("stay/move initialisation ({stay}, {move}) exceeds 1/(1-gamma) = {bound}; pass --q0", move = r#move);
            }
            let last = mdp.n_actions - 1;
            let values = (0..mdp.sa_count()).map(|i| if i % mdp.n_actions == last { r#move } else { stay }).collect();
            Ok(QFunction::from_values(mdp.n_states, mdp.n_actions, values)?)
        }
    }
}

/// The fixed policy named by `spec`; `None` for the on-policy learner.
pub fn fixed_policy(spec: &PolicySpec, mdp: &TabularMdp) -> Result<Option<Policy>> {
    let policy = match spec {
        PolicySpec::OnPolicy => return Ok(None),
        PolicySpec::Uniform => Policy::uniform(mdp.n_states, mdp.n_actions),
        PolicySpec::Action(a) => {
            if *a >= mdp.n_actions {
                bail!("policy action:{a} out of range for {} actions", mdp.n_actions);
            }
            Policy::deterministic(mdp.n_actions, &vec![*a; mdp.n_states])?
        }
        PolicySpec::File(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
            let p: Policy = serde_json::from_str(&text).with_context(|| format!("parsing policy {}", path.display()))?;
            Policy::new(p.n_states, p.n_actions, p.probs)?
        }
    };
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        bail!("policy shape {}x{} does not match MDP {}x{}", policy.n_states, policy.n_actions, mdp.n_states, mdp.n_actions);
    }
    Ok(Some(policy))
}

pub fn learner_config(cfg: &ExperimentConfig, mdp: &TabularMdp, mode: LearnerMode, exploration: Option<f64>) -> Result<LearnerConfig> {
    let (epsilon, tau) = exploration.map_or((cfg.epsilon, cfg.tau), |e| (e, e));
    Ok(LearnerConfig {
        alpha: Schedule::constant(cfg.alpha),
        epsilon: Schedule::constant(epsilon),
        tau: Schedule::constant(tau),
        horizon: cfg.horizon,
        mode,
        initial_q: initial_q(cfg, mdp)?,
        initial_state: cfg.initial_state,
        seed: cfg.base_seed,
        log_stride: cfg.log_stride,
    })
}

/// Loaded MDP with its optimal Q-function.
pub struct Problem {
    pub mdp: TabularMdp,
    pub q_star: QFunction,
}

impl Problem {
    pub fn load(cfg: &ExperimentConfig) -> Result<Problem> {
        let mdp = load_mdp(&cfg.mdp)?;
        let q_star = solve_optimal(&mdp)?;
        Ok(Problem { mdp, q_star })
    }

    pub fn ensemble(&self, cfg: &ExperimentConfig, mode: LearnerMode, exploration: Option<f64>) -> Result<Ensemble> {
        let lc = learner_config(cfg, &self.mdp, mode, exploration)?;
        Ok(ensemble_run(&self.mdp, &lc, &self.q_star, cfg.seeds)?)
    }
}

/// On-policy ensemble against the uniform off-policy baseline.
pub struct Comparison {
    pub on: Ensemble,
    pub off: Ensemble,
}

pub fn compare_on_off(problem: &Problem, cfg: &ExperimentConfig) -> Result<Comparison> {
    let uniform = Policy::uniform(problem.mdp.n_states, problem.mdp.n_actions);
    Ok(Comparison {
        on: problem.ensemble(cfg, LearnerMode::OnPolicy, None)?,
        off: problem.ensemble(cfg, LearnerMode::OffPolicy { policy: uniform }, None)?,
    })
}

/// Number of logged points past the first `burn_in` fraction where
/// `lower <= upper`, and the number of points considered.
pub fn ordering_count(lower: &[f64], upper: &[f64], burn_in: f64) -> (usize, usize) {
    let start = (lower.len() as f64 * burn_in).ceil() as usize;
    let held = (start..lower.len()).filter(|&i| lower[i] <= upper[i]).count();
    (held, lower.len().saturating_sub(start))
}

/// Mean of the last `fraction` of `series`.
pub fn tail_mean(series: &[f64], fraction: f64) -> f64 {
    let n = ((series.len() as f64 * fraction).ceil() as usize).clamp(1, series.len());
    series[series.len() - n..].iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub q_star: QFunction,
    pub q_policy: QFunction,
    pub policy: Policy,
    pub greedy: Policy,
}

pub fn solve(cfg: &ExperimentConfig) -> Result<SolveReport> {
    let problem = Problem::load(cfg)?;
    let mdp = &problem.mdp;
    let policy = match fixed_policy(&cfg.policy, mdp)? {
        Some(p) => p,
        None => mixture_softmax(&problem.q_star, ExplorationParams::new(cfg.epsilon, cfg.tau)?),
    };
    Ok(SolveReport {
        q_policy: policy_q(mdp, &policy)?,
        greedy: greedy_policy(&problem.q_star),
        policy,
        q_star: problem.q_star,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonCrossCheck {
    pub max_difference: f64,
    pub series_residual: f64,
    pub direct_residual: f64,
    pub series_terms: usize,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub policy: String,
    pub state_chain_irreducible: bool,
    pub joint_chain_irreducible: bool,
    pub exploration_constants: Option<ExplorationConstants>,
    pub stationary: Option<Vec<f64>>,
    pub empirical: Option<CertificateCheck>,
    pub certified: Option<CertificateCheck>,
    pub poisson: Option<PoissonCrossCheck>,
    /// Steps that could not be carried out, with the reason.
    pub skipped: Vec<String>,
}

/// Chain diagnostics of the fixed policy in `cfg`; for `on`, the learner's
/// policy at `Q*`. Reducibility is a verdict, not an error.
pub fn analyze(cfg: &ExperimentConfig) -> Result<AnalyzeReport> {
    let problem = Problem::load(cfg)?;
    let mdp = &problem.mdp;
    let policy = match fixed_policy(&cfg.policy, mdp)? {
        Some(p) => p,
        None => mixture_softmax(&problem.q_star, ExplorationParams::new(cfg.epsilon, cfg.tau)?),
    };
    let states = state_chain(mdp, &policy)?;
    let joint = joint_chain(mdp, &policy)?;
    let mut report = AnalyzeReport {
        policy: cfg.policy.to_string(),
        state_chain_irreducible: is_irreducible(&states),
        joint_chain_irreducible: is_irreducible(&joint),
        exploration_constants: None,
        stationary: None,
        empirical: None,
        certified: None,
        poisson: None,
        skipped: Vec::new(),
    };
    if report.state_chain_irreducible {
        report.exploration_constants = Some(exploration_constants(mdp, &policy)?);
    }
    if !report.joint_chain_irreducible {
        report.skipped.push("joint chain is reducible: no stationary distribution, certificates or Poisson check".into());
        return Ok(report);
    }
    let mu = stationary(&joint, DEFAULT_STATIONARY_TOL)?;
    let l = lazy(&joint);
    report.stationary = Some(mu.weights.clone());
    let empirical = match empirical_mixing(&l, &mu, cfg.k_max) {
        Ok(c) => Some(c),
        Err(e) => {
            report.skipped.push(format!("empirical certificate: {e}"));
            None
        }
    };
    report.empirical = empirical.map(|c| check_certificate(&l, &mu, &c, cfg.k_max));
    match report.exploration_constants.as_ref().map(|ec| certified_mixing(policy.min_prob(), ec)) {
        Some(Ok(c)) => report.certified = Some(check_certificate(&l, &mu, &c, cfg.k_max)),
        Some(Err(e)) => report.skipped.push(format!("certified certificate: {e}")),
        None => report.skipped.push("certified certificate: state chain is reducible".into()),
    }
    if let Some(cert) = empirical {
        let r = report.exploration_constants.map_or(mdp.sa_count(), |ec| ec.r);
        report.poisson = Some(poisson_check(&joint, &mu, &mdp.reward, &cert, series_budget(r, cert.rho))?);
    }
    Ok(report)
}

fn poisson_check(
    p: &qlab::chain::StochasticMatrix,
    mu: &StationaryDistribution,
    y: &[f64],
    cert: &MixingCertificate,
    k_max: usize,
) -> Result<PoissonCrossCheck> {
    let series = poisson_series(p, mu, y, DEFAULT_SERIES_TOL, k_max)?;
    let direct = poisson_direct(p, mu, y)?;
    let max_difference = series.x.iter().zip(&direct.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PoissonCrossCheck {
        max_difference,
        series_residual: series.residual_norm,
        direct_residual: direct.residual_norm,
        series_terms: series.terms,
        bound_holds: poisson_bound_check(&series, cert) && poisson_bound_check(&direct, cert),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub exploration_constants: ExplorationConstants,
    pub lambda_surrogate: f64,
    pub lambda_realized: f64,
    pub constants: Theorem1Constants,
    /// `c1` recomputed with the realized lambda.
    pub c1_realized: f64,
    pub q0_gap: f64,
    pub theorem1: Theorem1Curve,
    pub theorem2: Theorem2Decomposition,
    pub theorem2_values: Vec<f64>,
    pub complexity: Vec<(f64, Complexity, Complexity)>,
    pub theorem1_dominance: DominanceReport,
    pub theorem2_dominance: DominanceReport,
    /// Policy-gap bound against the mean plus three ensemble standard deviations.
    pub theorem2_with_noise: DominanceReport,
    #[serde(skip)]
    pub ensemble: Ensemble,
}

/// Mean-square error and policy-gap bounds for the on-policy learner in
/// `cfg`, evaluated at the ensemble's logged iterations. The reference policy
/// is the fixed policy in `cfg`, or uniform when `cfg.policy` is `on`.
pub fn bounds(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let problem = Problem::load(cfg)?;
    bounds_with(&problem, cfg, None)
}

/// [`bounds`] reusing an already computed on-policy ensemble.
pub fn bounds_with(problem: &Problem, cfg: &ExperimentConfig, ensemble: Option<Ensemble>) -> Result<BoundsReport> {
    let mdp = &problem.mdp;
    let pi_b = fixed_policy(&cfg.policy, mdp)?.unwrap_or_else(|| Policy::uniform(mdp.n_states, mdp.n_actions));
    let ec = exploration_constants(mdp, &pi_b)?;
    let lambda = cfg.epsilon / mdp.n_actions as f64;
    let constants = theorem1_constants(&ec, lambda, mdp.discount, cfg.tau, mdp.sa_count())?;
    let q0_gap = initial_q(cfg, mdp)?.distance(&problem.q_star);
    // reject a bad stepsize before spending time on the ensemble
    theorem1_curve(&constants, cfg.alpha, q0_gap, &[0])?;
    let ensemble = match ensemble {
        Some(e) => e,
        None => problem.ensemble(cfg, LearnerMode::OnPolicy, None)?,
    };
    let theorem1 = theorem1_curve(&constants, cfg.alpha, q0_gap, &ensemble.logged_iterations)?;
    let theorem2 = Theorem2Decomposition::new(mdp.discount, cfg.epsilon, cfg.tau, mdp.n_actions);
    let theorem2_values: Vec<f64> = ensemble.q_gap_sq.mean.iter().map(|&q| theorem2.bound(q)).collect();
    let noisy: Vec<f64> = theorem2_values.iter().zip(&ensemble.policy_q_gap_sq.std).map(|(b, s)| b + 3.0 * s).collect();
    let c1_realized = theorem1_constants(&ec, ensemble.realized_lambda.min(1.0), mdp.discount, cfg.tau, mdp.sa_count())?.c1;
    let complexity = cfg
        .xi
        .iter()
        .map(|&xi| -> Result<_> {
            Ok((
                xi,
                corollary1_complexity(&constants, xi, q0_gap, false)?,
                corollary1_complexity(&constants, xi, q0_gap, true)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(BoundsReport {
        exploration_constants: ec,
        lambda_surrogate: lambda,
        lambda_realized: ensemble.realized_lambda,
        c1_realized,
        q0_gap,
        theorem1_dominance: bound_vs_empirical(&theorem1.values, &ensemble.q_gap_sq.mean)?,
        theorem2_dominance: bound_vs_empirical(&theorem2_values, &ensemble.policy_q_gap_sq.mean)?,
        theorem2_with_noise: bound_vs_empirical(&noisy, &ensemble.policy_q_gap_sq.mean)?,
        constants,
        theorem1,
        theorem2,
        theorem2_values,
        complexity,
        ensemble,
    })
}
