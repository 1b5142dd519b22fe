//! Seeded simulation of tabular Q-learning driven either by the mixture-softmax
//! policy of the current estimate (on-policy) or by a fixed behaviour policy
//! (off-policy).
//!
//! Every run owns a `ChaCha8Rng` seeded with `seed_from_u64(seed)`; ensemble
//! member `i` uses seed `base_seed + i`, so each seed is an independent
//! stream and runs can execute in any order. Each step draws exactly two
//! uniforms from the stream: one for the action and one for the next state,
//! both resolved by inverse CDF over the row in stored order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{is_irreducible, state_chain};
use crate::error::{Error, Result};
use crate::mdp::{mixture_softmax, mixture_softmax_row, policy_q, ExplorationParams, Policy, QFunction, TabularMdp};

/// Generator used by [`run`]; recorded in trace metadata.
pub const RNG_NAME: &str = "rand_chacha::ChaCha8Rng::seed_from_u64";

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 500_000;
pub const DEFAULT_SEEDS: usize = 20;
pub const DEFAULT_LOG_STRIDE: usize = 1000;

/// Sequence `k -> value_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// `scale / (k + offset)`.
    InverseTime { scale: f64, offset: f64 },
    /// `scale / (k + offset)^power`.
    Polynomial { scale: f64, offset: f64, power: f64 },
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Schedule::Constant { value } => value,
            Schedule::InverseTime { scale, offset } => scale / (k as f64 + offset),
            Schedule::Polynomial { scale, offset, power } => scale / (k as f64 + offset).powf(power),
        }
    }

    fn check(&self, name: &str, horizon: usize, ok: impl Fn(f64) -> bool) -> Result<()> {
        let steps = if matches!(self, Schedule::Constant { .. }) { 1 } else { horizon.max(1) };
        for k in 0..steps {
            let v = self.at(k);
            if !ok(v) {
                return Err(Error::InvalidArgument(format!("{name}_{k} = {v} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerMode {
    OnPolicy,
    OffPolicy { policy: Policy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: Schedule,
    pub epsilon: Schedule,
    pub tau: Schedule,
    pub horizon: usize,
    pub mode: LearnerMode,
    pub initial_q: QFunction,
    pub initial_state: usize,
    pub seed: u64,
    pub log_stride: usize,
}

impl LearnerConfig {
    /// Constant-parameter configuration with the default horizon and stride.
    pub fn constant(alpha: f64, epsilon: f64, tau: f64, mode: LearnerMode, initial_q: QFunction) -> Self {
        LearnerConfig {
            alpha: Schedule::constant(alpha),
            epsilon: Schedule::constant(epsilon),
            tau: Schedule::constant(tau),
            horizon: DEFAULT_HORIZON,
            mode,
            initial_q,
            initial_state: 0,
            seed: 0,
            log_stride: DEFAULT_LOG_STRIDE,
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let k = self.horizon;
        self.alpha.check("alpha", k, |a| a > 0.0 && a <= 1.0)?;
        self.epsilon.check("epsilon", k, |e| e > 0.0 && e <= 1.0)?;
        self.tau.check("tau", k, |t| t > 0.0 && t.is_finite())?;
        if self.log_stride == 0 {
            return Err(Error::InvalidArgument("log_stride must be positive".into()));
        }
        if self.initial_q.n_states != mdp.n_states || self.initial_q.n_actions != mdp.n_actions {
            return Err(Error::Dimension("initial Q does not match MDP".into()));
        }
        let bound = 1.0 / (1.0 - mdp.discount);
        if !self.initial_q.is_finite() || self.initial_q.sup_norm() > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "||Q0||_inf = {} exceeds 1/(1-gamma) = {bound}",
                self.initial_q.sup_norm()
            )));
        }
        if self.initial_state >= mdp.n_states {
            return Err(Error::InvalidArgument(format!("initial state {} out of range", self.initial_state)));
        }
        if let LearnerMode::OffPolicy { policy } = &self.mode {
            if !is_irreducible(&state_chain(mdp, policy)?) {
                return Err(Error::Reducible);
            }
        }
        Ok(())
    }

    #[inline]
    fn params(&self, k: usize) -> ExplorationParams {
        ExplorationParams { epsilon: self.epsilon.at(k), tau: self.tau.at(k) }
    }
}

/// Logged trajectory of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub logged_iterations: Vec<usize>,
    /// `||Q_k - Q*||_inf` at each logged `k`.
    pub q_gap: Vec<f64>,
    /// `||Q^{pi_k} - Q*||_inf` at each logged `k`; constant in off-policy mode.
    pub policy_q_gap: Vec<f64>,
    /// Visits per state-action pair, row-major; sums to the horizon.
    pub visit_counts: Vec<u64>,
    pub final_q: QFunction,
    pub seed: u64,
    /// Smallest action probability over every sampled row and every logged
    /// full policy.
    pub realized_lambda: f64,
    /// `max_k ||Q_k||_inf`.
    pub max_abs_q: f64,
    /// `min_k (min_a pi_k(a|S_k) - epsilon_k/|A|)` over on-policy steps;
    /// infinite in off-policy mode.
    pub min_floor_margin: f64,
}

#[inline]
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// One Q-learning update in place; returns `(next_state, action)`.
#[inline]
pub fn step_in_place<R: Rng>(
    mdp: &TabularMdp,
    q: &mut QFunction,
    state: usize,
    action_probs: &[f64],
    alpha: f64,
    rng: &mut R,
) -> (usize, usize) {
    let action = sample_index(action_probs, rng.random::<f64>());
    let next = sample_index(mdp.transition_row(state, action), rng.random::<f64>());
    let target = mdp.reward(state, action) + mdp.discount * q.max_row(next);
    let i = mdp.sa(state, action);
    q.values[i] += alpha * (target - q.values[i]);
    (next, action)
}

/// Samples `A ~ pi(.|state)` and `S' ~ p(.|state, A)` and returns the updated
/// table together with `S'` and `A`.
pub fn qlearning_step<R: Rng>(
    mdp: &TabularMdp,
    q: &QFunction,
    state: usize,
    policy: &Policy,
    alpha: f64,
    rng: &mut R,
) -> Result<(QFunction, usize, usize)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0,1]")));
    }
    if state >= mdp.n_states || policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::Dimension("state or policy does not match MDP".into()));
    }
    let mut next_q = q.clone();
    let (next, action) = step_in_place(mdp, &mut next_q, state, policy.row(state), alpha, rng);
    Ok((next_q, next, action))
}

/// Runs the learner for `config.horizon` steps, logging the Q-gap and the
/// learning policy's gap at `k = 0, stride, 2 stride, ...` and at the horizon.
pub fn run(mdp: &TabularMdp, config: &LearnerConfig, q_star: &QFunction) -> Result<RunTrace> {
    config.validate(mdp)?;
    let na = mdp.n_actions;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = config.initial_q.clone();
    let mut state = config.initial_state;
    let mut row = vec![0.0; na];
    let mut visits = vec![0u64; mdp.sa_count()];
    let bound = q.sup_norm().max(mdp.value_bound());

    let fixed_gap = match &config.mode {
        LearnerMode::OffPolicy { policy } => Some(policy_q(mdp, policy)?.distance(q_star)),
        LearnerMode::OnPolicy => None,
    };
    let mut trace = RunTrace {
        logged_iterations: Vec::new(),
        q_gap: Vec::new(),
        policy_q_gap: Vec::new(),
        visit_counts: Vec::new(),
        final_q: q.clone(),
        seed: config.seed,
        realized_lambda: match &config.mode {
            LearnerMode::OffPolicy { policy } => policy.min_prob(),
            LearnerMode::OnPolicy => f64::INFINITY,
        },
        max_abs_q: q.sup_norm(),
        min_floor_margin: f64::INFINITY,
    };

    let log = |k: usize, q: &QFunction, trace: &mut RunTrace| -> Result<()> {
        trace.logged_iterations.push(k);
        trace.q_gap.push(q.distance(q_star));
        let gap = match fixed_gap {
            Some(g) => g,
            None => {
                let pi = mixture_softmax(q, config.params(k));
                trace.realized_lambda = trace.realized_lambda.min(pi.min_prob());
                policy_q(mdp, &pi)?.distance(q_star)
            }
        };
        trace.policy_q_gap.push(gap);
        Ok(())
    };

    log(0, &q, &mut trace)?;
    for k in 0..config.horizon {
        let alpha = config.alpha.at(k);
        let probs: &[f64] = match &config.mode {
            LearnerMode::OnPolicy => {
                let params = config.params(k);
                mixture_softmax_row(q.row(state), params, &mut row);
                let row_min = row.iter().copied().fold(f64::INFINITY, f64::min);
                trace.realized_lambda = trace.realized_lambda.min(row_min);
                trace.min_floor_margin = trace.min_floor_margin.min(row_min - params.epsilon / na as f64);
                &row
            }
            LearnerMode::OffPolicy { policy } => policy.row(state),
        };
        let (next, action) = step_in_place(mdp, &mut q, state, probs, alpha, &mut rng);
        let i = mdp.sa(state, action);
        visits[i] += 1;
        let updated = q.values[i].abs();
        if updated > trace.max_abs_q {
            trace.max_abs_q = updated;
        }
        debug_assert!(updated <= bound * (1.0 + 1e-12), "|Q| = {updated} exceeds {bound}");
        state = next;
        let done = k + 1;
        if done % config.log_stride == 0 || done == config.horizon {
            log(done, &q, &mut trace)?;
        }
    }
    trace.visit_counts = visits;
    trace.final_q = q;
    Ok(trace)
}

/// Mean and population standard deviation across seeds at each logged step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Band {
    pub fn from_series<'a>(series: impl IntoIterator<Item = &'a [f64]>) -> Band {
        let rows: Vec<&[f64]> = series.into_iter().collect();
        let len = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        for j in 0..len {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Band { mean, std }
    }
}

/// Aggregated ensemble of runs over consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub seeds: Vec<u64>,
    pub logged_iterations: Vec<usize>,
    pub q_gap: Band,
    pub policy_q_gap: Band,
    pub q_gap_sq: Band,
    pub policy_q_gap_sq: Band,
    pub realized_lambda: f64,
    pub traces: Vec<RunTrace>,
}

/// Runs seeds `config.seed .. config.seed + n_seeds` in parallel and
/// aggregates the aligned logs in seed order.
pub fn ensemble_run(mdp: &TabularMdp, config: &LearnerConfig, q_star: &QFunction, n_seeds: usize) -> Result<Ensemble> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("n_seeds must be at least 1".into()));
    }
    config.validate(mdp)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let traces = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnerConfig { seed, ..config.clone() };
            run(mdp, &cfg, q_star)
        })
        .collect::<Result<Vec<_>>>()?;
    let squares = |f: fn(&RunTrace) -> &Vec<f64>| -> Vec<Vec<f64>> {
        traces.iter().map(|t| f(t).iter().map(|g| g * g).collect()).collect()
    };
    let q_sq = squares(|t| &t.q_gap);
    let p_sq = squares(|t| &t.policy_q_gap);
    Ok(Ensemble {
        logged_iterations: traces[0].logged_iterations.clone(),
        q_gap: Band::from_series(traces.iter().map(|t| t.q_gap.as_slice())),
        policy_q_gap: Band::from_series(traces.iter().map(|t| t.policy_q_gap.as_slice())),
        q_gap_sq: Band::from_series(q_sq.iter().map(Vec::as_slice)),
        policy_q_gap_sq: Band::from_series(p_sq.iter().map(Vec::as_slice)),
        realized_lambda: traces.iter().map(|t| t.realized_lambda).fold(f64::INFINITY, f64::min),
        seeds,
        traces,
    })
}
