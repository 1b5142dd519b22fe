//! Finite discounted MDPs and their exact solvers.
//!
//! Tables are stored flat and row-major: a Q-function or policy entry for
//! `(s, a)` lives at `s * n_actions + a`, and the transition probability
//! `p(s' | s, a)` lives at `(s * n_actions + a) * n_states + s'`. The same
//! `(s, a) -> s * n_actions + a` map indexes the joint state-action chain in
//! [`crate::chain`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that probability rows sum to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor, reward table and discount factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// Row-major `|S| x |A|`.
    pub reward: Vec<f64>,
    /// Row-major `|S| x |A| x |S|`.
    pub transition: Vec<f64>,
}

/// One violated invariant found by [`TabularMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace { n_states: usize, n_actions: usize },
    Shape { field: &'static str, expected: usize, found: usize },
    Discount(f64),
    NegativeTransition { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
    RewardBound { state: usize, action: usize, value: f64 },
    NonFinite { field: &'static str, index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { n_states, n_actions } => {
                write!(f, "empty space: n_states={n_states}, n_actions={n_actions}")
            }
            Violation::Shape { field, expected, found } => {
                write!(f, "{field} has {found} entries, expected {expected}")
            }
            Violation::Discount(g) => write!(f, "discount {g} outside (0,1)"),
            Violation::NegativeTransition { state, action, next, value } => write!(
                f,
                "transition row (s={state},a={action}) has negative entry {value} at s'={next}"
            ),
            Violation::RowSum { state, action, sum } => {
                write!(f, "transition row (s={state},a={action}) sums to {sum}")
            }
            Violation::RewardBound { state, action, value } => {
                write!(f, "reward bound |R(s={state},a={action})| = {} > 1", value.abs())
            }
            Violation::NonFinite { field, index } => {
                write!(f, "{field}[{index}] is not finite")
            }
        }
    }
}

impl TabularMdp {
    /// Builds an MDP after checking table shapes. Probabilistic invariants are
    /// reported by [`TabularMdp::validate`], not enforced here.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp { n_states, n_actions, discount, reward, transition };
        mdp.check_shape()?;
        Ok(mdp)
    }

    fn check_shape(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Dimension("MDP needs at least one state and one action".into()));
        }
        let sa = self.n_states * self.n_actions;
        if self.reward.len() != sa {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {sa}",
                self.reward.len()
            )));
        }
        if self.transition.len() != sa * self.n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                sa * self.n_states
            )));
        }
        Ok(())
    }

    /// Lists every violated invariant; an empty list means the MDP is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            out.push(Violation::EmptySpace { n_states: ns, n_actions: na });
            return out;
        }
        let sa = ns * na;
        if self.reward.len() != sa {
            out.push(Violation::Shape { field: "reward", expected: sa, found: self.reward.len() });
        }
        if self.transition.len() != sa * ns {
            out.push(Violation::Shape {
                field: "transition",
                expected: sa * ns,
                found: self.transition.len(),
            });
        }
        if !out.is_empty() {
            return out;
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(Violation::Discount(self.discount));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                let mut finite = true;
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() {
                        finite = false;
                        out.push(Violation::NonFinite {
                            field: "transition",
                            index: self.sa(s, a) * ns + next,
                        });
                    } else if p < 0.0 {
                        out.push(Violation::NegativeTransition { state: s, action: a, next, value: p });
                    }
                }
                let sum: f64 = row.iter().sum();
                if finite && (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::RowSum { state: s, action: a, sum });
                }
                let r = self.reward(s, a);
                if !r.is_finite() {
                    out.push(Violation::NonFinite { field: "reward", index: self.sa(s, a) });
                } else if r.abs() > 1.0 {
                    out.push(Violation::RewardBound { state: s, action: a, value: r });
                }
            }
        }
        out
    }

    /// Returns `self` when valid, otherwise an error carrying every violation.
    pub fn validated(self) -> Result<Self> {
        let report = self.validate();
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidMdp(report.iter().map(ToString::to_string).collect()))
        }
    }

    #[inline]
    pub fn sa(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn sa_count(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[self.sa(s, a)]
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.sa(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Upper bound `max|R| / (1 - gamma)` on every Q-function of this MDP.
    pub fn value_bound(&self) -> f64 {
        self.max_abs_reward() / (1.0 - self.discount)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: TabularMdp =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        mdp.check_shape()?;
        Ok(mdp)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    fn check_q(&self, q: &QFunction) -> Result<()> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions {
            return Err(Error::Dimension(format!(
                "Q-function is {}x{}, MDP is {}x{}",
                q.n_states, q.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states, policy.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// Real table indexed by state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        QFunction { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "{} values for a {n_states}x{n_actions} table",
                values.len()
            )));
        }
        Ok(QFunction { n_states, n_actions, values })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn max_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_inf`; both tables must have the same shape.
    pub fn distance(&self, other: &QFunction) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Row-stochastic action distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "{} probabilities for a {n_states}x{n_actions} policy",
                probs.len()
            )));
        }
        let policy = Policy { n_states, n_actions, probs };
        for s in 0..n_states {
            let row = policy.row(s);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidArgument(format!("policy row {s} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(policy)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Policy { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let n_states = actions.len();
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy { n_states, n_actions, probs })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Induced infinity norm of the difference: `max_s sum_a |pi1(a|s) - pi2(a|s)|`.
    pub fn distance(&self, other: &Policy) -> f64 {
        debug_assert_eq!(self.probs.len(), other.probs.len());
        (0..self.n_states)
            .map(|s| self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
    }
}

/// Exploration parameters of the mixture-softmax learning policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationParams {
    pub epsilon: f64,
    pub tau: f64,
}

impl ExplorationParams {
    pub fn new(epsilon: f64, tau: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0,1]")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau {tau} must be positive")));
        }
        Ok(ExplorationParams { epsilon, tau })
    }
}

/// Bellman optimality operator `H`.
pub fn bellman_optimality(mdp: &TabularMdp, q: &QFunction) -> Result<QFunction> {
    mdp.check_q(q)?;
    let v: Vec<f64> = (0..mdp.n_states).map(|s| q.max_row(s)).collect();
    Ok(backup(mdp, &v))
}

/// Bellman operator `H_pi` of a fixed policy.
pub fn bellman_policy(mdp: &TabularMdp, policy: &Policy, q: &QFunction) -> Result<QFunction> {
    mdp.check_q(q)?;
    mdp.check_policy(policy)?;
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| q.row(s).iter().zip(policy.row(s)).map(|(qv, p)| qv * p).sum())
        .collect();
    Ok(backup(mdp, &v))
}

// R + gamma * P v for a state-value vector v.
fn backup(mdp: &TabularMdp, v: &[f64]) -> QFunction {
    let mut out = QFunction::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let cont: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            out.set(s, a, mdp.reward(s, a) + mdp.discount * cont);
        }
    }
    out
}

pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// Iteration budget `ceil(log(2/((1-gamma) tol)) / (1-gamma)) + 1`.
pub fn default_vi_budget(discount: f64, tol: f64) -> usize {
    let g = 1.0 - discount;
    ((2.0 / (g * tol)).ln() / g).ceil().max(0.0) as usize + 1
}

/// Q-value iteration from `Q = 0`, stopping at the first iterate with
/// `||H(Q) - Q||_inf <= tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QFunction> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let mut q = QFunction::zeros(mdp.n_states, mdp.n_actions);
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let next = bellman_optimality(mdp, &q)?;
        residual = next.distance(&q);
        if residual <= tol {
            return Ok(q);
        }
        q = next;
    }
    Err(Error::NotConverged { iterations: max_iter, residual })
}

/// [`value_iteration`] with the default tolerance and budget.
pub fn solve_optimal(mdp: &TabularMdp) -> Result<QFunction> {
    value_iteration(mdp, DEFAULT_VI_TOL, default_vi_budget(mdp.discount, DEFAULT_VI_TOL))
}

/// Exact `Q^pi` from the dense linear system `(I - gamma Pbar_pi) Q = R`
/// over state-action pairs.
pub fn policy_q(mdp: &TabularMdp, policy: &Policy) -> Result<QFunction> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let g = mdp.discount;
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    for s in 0..ns {
        for a in 0..na {
            let i = mdp.sa(s, a);
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a2, &pi) in policy.row(s2).iter().enumerate() {
                    a_mat[(i, s2 * na + a2)] -= g * p * pi;
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(&mdp.reward);
    let sol = a_mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - gamma * Pbar_pi".into()))?;
    QFunction::from_values(ns, na, sol.as_slice().to_vec())
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_policy(q: &QFunction) -> Policy {
    let actions: Vec<usize> = (0..q.n_states).map(|s| argmax(q.row(s))).collect();
    Policy::deterministic(q.n_actions, &actions).expect("argmax is in range")
}

/// Writes `eps/|A| + (1-eps) softmax(q_row / tau)` into `out`.
#[inline]
pub fn mixture_softmax_row(q_row: &[f64], params: ExplorationParams, out: &mut [f64]) {
    let n = q_row.len();
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(q_row) {
        let e = ((v - max) / params.tau).exp();
        *o = e;
        z += e;
    }
    let floor = params.epsilon / n as f64;
    let w = 1.0 - params.epsilon;
    for o in out.iter_mut() {
        *o = floor + w * (*o / z);
    }
}

/// Mixture of the uniform policy (weight epsilon) and the temperature-tau
/// softmax of `q`.
pub fn mixture_softmax(q: &QFunction, params: ExplorationParams) -> Policy {
    let mut probs = vec![0.0; q.values.len()];
    for s in 0..q.n_states {
        let range = s * q.n_actions..(s + 1) * q.n_actions;
        mixture_softmax_row(q.row(s), params, &mut probs[range]);
    }
    Policy { n_states: q.n_states, n_actions: q.n_actions, probs }
}

/// Cyclic test MDP: the last action moves `s_i -> s_{(i+1) mod n}` with
/// reward 1, every other action stays put with reward 0.
pub fn build_cyclic_mdp(n_states: usize, n_actions: usize, discount: f64) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 2 {
        return Err(Error::InvalidArgument(format!(
            "cyclic MDP needs n_states >= 2 and n_actions >= 2, got ({n_states}, {n_actions})"
        )));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!("discount {discount} outside (0,1)")));
    }
    let move_action = n_actions - 1;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        for a in 0..n_actions {
            let next = if a == move_action { (s + 1) % n_states } else { s };
            transition[(s * n_actions + a) * n_states + next] = 1.0;
            if a == move_action {
                reward[s * n_actions + a] = 1.0;
            }
        }
    }
    TabularMdp::new(n_states, n_actions, transition, reward, discount)
}

/// `max_i x_i - sum_i x_i w_i e^{beta x_i} / sum_j w_j e^{beta x_j}`.
pub fn softmax_gap(x: &[f64], weights: &[f64], beta: f64) -> f64 {
    debug_assert_eq!(x.len(), weights.len());
    debug_assert!(weights.iter().all(|&w| w > 0.0));
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&xi, &wi) in x.iter().zip(weights) {
        let e = wi * (beta * (xi - max)).exp();
        num += (xi - max) * e;
        den += e;
    }
    // shifted by max, so the gap is -(weighted mean of x - max)
    (-num / den).max(0.0)
}
