//! Stochastic-approximation view of the Q-learning update: the sampled
//! operator `F(Q, y)`, its stationary average `Fbar(Q, pi)` and the
//! martingale-difference noise `M(Q)`.

use super::StationaryDistribution;
use crate::error::{Error, Result};
use crate::mdp::{bellman_optimality, Policy, QFunction, TabularMdp};

fn check_pair(mdp: &TabularMdp, y: (usize, usize)) -> Result<()> {
    if y.0 >= mdp.n_states || y.1 >= mdp.n_actions {
        return Err(Error::InvalidArgument(format!(
            "pair ({}, {}) out of range for a {}x{} MDP",
            y.0, y.1, mdp.n_states, mdp.n_actions
        )));
    }
    Ok(())
}

/// `Fbar(Q, pi) = Q + D_pi (H(Q) - Q)` with `D_pi = diag(mubar_pi)`.
pub fn fbar(
    mdp: &TabularMdp,
    policy: &Policy,
    q: &QFunction,
    mu_bar: &StationaryDistribution,
) -> Result<QFunction> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::Dimension("policy does not match MDP".into()));
    }
    if mu_bar.weights.len() != mdp.sa_count() {
        return Err(Error::Dimension(format!(
            "joint stationary distribution has {} entries, expected {}",
            mu_bar.weights.len(),
            mdp.sa_count()
        )));
    }
    let h = bellman_optimality(mdp, q)?;
    let mut out = q.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        *v += mu_bar.weights[i] * (h.values[i] - q.values[i]);
    }
    Ok(out)
}

/// Sampled operator `F(Q, y)`: the Bellman backup applied at `y` only.
pub fn f_sample(mdp: &TabularMdp, q: &QFunction, y: (usize, usize)) -> Result<QFunction> {
    check_pair(mdp, y)?;
    let h = bellman_optimality(mdp, q)?;
    let mut out = q.clone();
    out.set(y.0, y.1, h.get(y.0, y.1));
    Ok(out)
}

/// Realised noise `M(Q)` when the transition out of `y` lands in `next`.
pub fn noise_sample(mdp: &TabularMdp, q: &QFunction, y: (usize, usize), next: usize) -> Result<QFunction> {
    check_pair(mdp, y)?;
    if next >= mdp.n_states {
        return Err(Error::InvalidArgument(format!("next state {next} out of range")));
    }
    let mut out = QFunction::zeros(mdp.n_states, mdp.n_actions);
    out.set(y.0, y.1, mdp.discount * (q.max_row(next) - expected_next_max(mdp, q, y)));
    Ok(out)
}

fn expected_next_max(mdp: &TabularMdp, q: &QFunction, y: (usize, usize)) -> f64 {
    mdp.transition_row(y.0, y.1)
        .iter()
        .enumerate()
        .map(|(s2, p)| p * q.max_row(s2))
        .sum()
}

/// `E[M(Q) | Y = y]`, summed exactly over next states. Zero up to rounding.
pub fn noise_conditional_mean(mdp: &TabularMdp, q: &QFunction, y: (usize, usize)) -> Result<QFunction> {
    check_pair(mdp, y)?;
    let mut mean = QFunction::zeros(mdp.n_states, mdp.n_actions);
    for (next, &p) in mdp.transition_row(y.0, y.1).iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let m = noise_sample(mdp, q, y, next)?;
        for (acc, v) in mean.values.iter_mut().zip(&m.values) {
            *acc += p * v;
        }
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{joint_chain, stationary, DEFAULT_STATIONARY_TOL};
    use crate::mdp::{build_cyclic_mdp, solve_optimal};
    use approx::assert_abs_diff_eq;

    #[test]
    fn f_sample_hits_and_misses() {
        let mdp = build_cyclic_mdp(3, 2, 0.9).unwrap();
        let q_star = solve_optimal(&mdp).unwrap();
        let out = f_sample(&mdp, &q_star, (1, 1)).unwrap();
        assert_abs_diff_eq!(out.get(1, 1), q_star.get(1, 1), epsilon = 1e-9);

        let q = QFunction::from_values(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0]).unwrap();
        let out = f_sample(&mdp, &q, (0, 1)).unwrap();
        for i in [0, 2, 3, 4, 5] {
            assert_eq!(out.values[i], q.values[i]);
        }
        assert!(f_sample(&mdp, &q, (3, 0)).is_err());
    }

    #[test]
    fn fbar_fixed_point_and_scalar_blend() {
        let mdp = build_cyclic_mdp(4, 2, 0.8).unwrap();
        let pi = Policy::uniform(4, 2);
        let mu = stationary(&joint_chain(&mdp, &pi).unwrap(), DEFAULT_STATIONARY_TOL).unwrap();
        let q_star = solve_optimal(&mdp).unwrap();
        assert!(fbar(&mdp, &pi, &q_star, &mu).unwrap().distance(&q_star) < 1e-8);

        // the uniform policy on the cyclic chain makes every pair equally likely
        for w in &mu.weights {
            assert_abs_diff_eq!(*w, 0.125, epsilon = 1e-12);
        }
        let flat = StationaryDistribution::from_weights(vec![0.125; 8]);
        let q = QFunction::from_values(4, 2, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let h = bellman_optimality(&mdp, &q).unwrap();
        let out = fbar(&mdp, &pi, &q, &flat).unwrap();
        for i in 0..8 {
            assert_abs_diff_eq!(out.values[i], 0.875 * q.values[i] + 0.125 * h.values[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn noise_mean_is_zero_on_deterministic_mdp() {
        let mdp = build_cyclic_mdp(3, 2, 0.9).unwrap();
        let q = QFunction::from_values(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0]).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let m = noise_conditional_mean(&mdp, &q, (s, a)).unwrap();
                assert!(m.values.iter().all(|&v| v == 0.0));
            }
        }
    }
}
