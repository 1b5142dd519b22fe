//! Seeded generators of random instances for tests and sweeps.

use rand::Rng;

use crate::chain::StochasticMatrix;
use crate::mdp::{Policy, QFunction, TabularMdp};

fn simplex<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Dense MDP with rewards uniform on `[-1, 1]` and strictly positive
/// transition rows, so every policy induces an irreducible chain.
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, discount: f64) -> TabularMdp {
    let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let transition = (0..n_states * n_actions)
        .flat_map(|_| simplex(rng, n_states, 0.05))
        .collect();
    TabularMdp::new(n_states, n_actions, transition, reward, discount)
        .expect("shapes are consistent")
}

/// Like [`random_mdp`] but each row has support on at most `support` states,
/// always including the cyclic successor so the all-actions chain stays
/// irreducible.
pub fn random_sparse_mdp<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    discount: f64,
    support: usize,
) -> TabularMdp {
    let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
            row[(s + 1) % n_states] = 0.1 + rng.random::<f64>();
            for _ in 1..support.max(1) {
                row[rng.random_range(0..n_states)] += rng.random::<f64>();
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    TabularMdp::new(n_states, n_actions, transition, reward, discount)
        .expect("shapes are consistent")
}

/// Policy with every probability at least roughly `floor / (|A| (floor + 1))`.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, floor: f64) -> Policy {
    let probs = (0..n_states).flat_map(|_| simplex(rng, n_actions, floor)).collect();
    Policy::new(n_states, n_actions, probs).expect("rows are normalised")
}

/// Entries uniform on `[-bound, bound]`.
pub fn random_q<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, bound: f64) -> QFunction {
    let values = (0..n_states * n_actions).map(|_| rng.random_range(-bound..=bound)).collect();
    QFunction::from_values(n_states, n_actions, values).expect("length matches")
}

/// Irreducible chain: a random cycle with positive weight plus random sparse
/// extra edges.
pub fn random_irreducible_chain<R: Rng>(rng: &mut R, n: usize) -> StochasticMatrix {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        rows[order[i]][order[(i + 1) % n]] = 0.2 + rng.random::<f64>();
        for j in 0..n {
            if rng.random::<f64>() < 0.3 {
                rows[i][j] += rng.random::<f64>();
            }
        }
    }
    for row in &mut rows {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    StochasticMatrix::from_rows(&rows).expect("rows are normalised")
}
