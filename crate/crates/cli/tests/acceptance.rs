//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` still run and still print FAIL; they
//! only keep the process exit code at zero. Any other failure exits with 1.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qlab::bounds::bound_vs_empirical;
use qlab::chain::{
    certified_mixing, check_certificate, empirical_mixing, exploration_constants, f_sample, fbar, joint_chain, lazy,
    lazy_joint, noise_conditional_mean, poisson_bound_check, poisson_direct, poisson_series, stationary,
    DEFAULT_SERIES_TOL, DEFAULT_STATIONARY_TOL,
};
use qlab::mdp::{bellman_optimality, bellman_policy, build_cyclic_mdp, solve_optimal, Policy, QFunction};
use qlab::qlearn::{run, Ensemble, LearnerConfig, LearnerMode};
use qlab::random::{random_irreducible_chain, random_mdp, random_policy, random_q};
use qlab_cli::commands::{BURN_IN, FINAL_WINDOW};
use qlab_cli::config::{ExperimentConfig, InitialQ, MdpSource};
use qlab_cli::experiments::{bounds_with, compare_on_off, ordering_count, tail_mean, Problem};

const KNOWN_FAILING: &[u32] = &[6];
const SLACK: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let mdp = build_cyclic_mdp(20, 10, 0.99).unwrap();
    let q = solve_optimal(&mdp).unwrap();
    let err = (0..20)
        .flat_map(|s| (0..10).map(move |a| (s, a)))
        .map(|(s, a)| (q.get(s, a) - if a == 9 { 100.0 } else { 99.0 }).abs())
        .fold(0.0, f64::max);
    let t = started.elapsed();
    verdict(err <= 1e-6 && within(t, 5.0), format!("max |Q* - (99|100)| = {err:.2e}, {:.2}s (limit 5s)", t.as_secs_f64()))
}

fn criterion_2() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..200 {
        let (ns, na) = (rng.random_range(2..=6), rng.random_range(2..=4));
        let gamma = rng.random_range(0.5..0.95);
        let mdp = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na, 0.05);
        let mu = stationary(&joint_chain(&mdp, &pi).unwrap(), DEFAULT_STATIONARY_TOL).unwrap();
        let bound = 1.0 / (1.0 - gamma);
        let q1 = random_q(&mut rng, ns, na, bound);
        let q2 = random_q(&mut rng, ns, na, bound);
        let d = q1.distance(&q2);
        let y = (rng.random_range(0..ns), rng.random_range(0..na));
        let h = |q: &QFunction| bellman_optimality(&mdp, q).unwrap();
        let hp = |q: &QFunction| bellman_policy(&mdp, &pi, q).unwrap();
        let fb = |q: &QFunction| fbar(&mdp, &pi, q, &mu).unwrap();
        let f = |q: &QFunction| f_sample(&mdp, q, y).unwrap();
        let gamma_pi = 1.0 - mu.min_weight * (1.0 - gamma);
        let checks = [
            h(&q1).distance(&h(&q2)) <= gamma * d + SLACK,
            hp(&q1).distance(&hp(&q2)) <= gamma * d + SLACK,
            fb(&q1).distance(&fb(&q2)) <= gamma_pi * d + SLACK,
            f(&q1).distance(&f(&q2)) <= d + SLACK,
            f(&q1).distance(&fb(&q1)) <= 2.0 / (1.0 - gamma) + SLACK,
        ];
        violations += checks.iter().filter(|ok| !**ok).count();
    }
    let t = started.elapsed();
    verdict(violations == 0 && within(t, 10.0), format!("{violations} violations over 200 pairs, {:.2}s (limit 10s)", t.as_secs_f64()))
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_diff, mut worst_res, mut bound_failures) = (0.0f64, 0.0f64, 0);
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let p = random_irreducible_chain(&mut rng, n);
        let mu = stationary(&p, DEFAULT_STATIONARY_TOL).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let series = poisson_series(&p, &mu, &y, DEFAULT_SERIES_TOL, 1_000_000).unwrap();
        let direct = poisson_direct(&p, &mu, &y).unwrap();
        let diff = series.x.iter().zip(&direct.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_diff = worst_diff.max(diff);
        worst_res = worst_res.max(series.residual_norm).max(direct.residual_norm);
        let cert = empirical_mixing(&lazy(&p), &mu, 500).unwrap();
        bound_failures += [&series, &direct].iter().filter(|s| !poisson_bound_check(s, &cert)).count();
    }
    let t = started.elapsed();
    verdict(
        worst_diff <= 1e-7 && worst_res <= 1e-8 && bound_failures == 0 && within(t, 30.0),
        format!(
            "max |series - direct| {worst_diff:.2e}, max residual {worst_res:.2e}, {bound_failures} bound failures, {:.2}s (limit 30s)",
            t.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let mdp = build_cyclic_mdp(4, 2, 0.8).unwrap();
    let pi = Policy::uniform(4, 2);
    let (l, mu) = lazy_joint(&mdp, &pi).unwrap();
    let ec = exploration_constants(&mdp, &pi).unwrap();
    let certs = [empirical_mixing(&l, &mu, 500).unwrap(), certified_mixing(pi.min_prob(), &ec).unwrap()];
    let violations: Vec<usize> = certs.iter().map(|c| check_certificate(&l, &mu, c, 500).violations()).collect();
    let t = started.elapsed();
    verdict(
        violations.iter().all(|v| *v == 0) && within(t, 30.0),
        format!(
            "violations over k <= 500: empirical {}, certified {}; {:.2}s (limit 30s)",
            violations[0],
            violations[1],
            t.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let na = rng.random_range(2..=4);
        let mdp = random_mdp(&mut rng, 5, na, 0.9);
        let q = random_q(&mut rng, 5, na, 10.0);
        for s in 0..5 {
            for a in 0..na {
                worst = worst.max(noise_conditional_mean(&mdp, &q, (s, a)).unwrap().sup_norm());
            }
        }
    }
    let t = started.elapsed();
    verdict(worst <= 1e-12 && within(t, 5.0), format!("max |E[M | y]| = {worst:.2e}, {:.2}s (limit 5s)", t.as_secs_f64()))
}

fn criterion_6(on: &Ensemble, off: &Ensemble, elapsed: Duration) -> Verdict {
    let (held, total) = ordering_count(&off.q_gap.mean, &on.q_gap.mean, BURN_IN);
    let fraction = held as f64 / total as f64;
    verdict(
        fraction >= 0.9 && within(elapsed, 900.0),
        format!(
            "off <= on at {held}/{total} logged points ({:.1}%, need 90%); final means on {:.4} off {:.4}; {:.1}s (limit 900s)",
            100.0 * fraction,
            on.q_gap.mean.last().unwrap(),
            off.q_gap.mean.last().unwrap(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(runs: &[(f64, &Ensemble)]) -> Verdict {
    let mut finals: Vec<(f64, f64)> = runs.iter().map(|(e, r)| (*e, tail_mean(&r.policy_q_gap.mean, FINAL_WINDOW))).collect();
    finals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ordered = finals.windows(2).all(|w| w[0].1 < w[1].1);
    let text: Vec<String> = finals.iter().map(|(e, g)| format!("{e}: {g:.4}")).collect();
    verdict(ordered, format!("final-window policy gap {}", text.join(", ")))
}

fn criterion_8() -> Verdict {
    let started = Instant::now();
    let cfg = ExperimentConfig {
        mdp: MdpSource::Cyclic { n_states: 4, n_actions: 2, discount: 0.8 },
        alpha: 0.01,
        horizon: 20_000,
        log_stride: 100,
        initial_q: InitialQ::Constant { value: 0.0 },
        ..Default::default()
    };
    let problem = Problem::load(&cfg).unwrap();
    match bounds_with(&problem, &cfg, None) {
        Ok(r) => verdict(
            r.theorem1_dominance.fraction == 1.0,
            format!(
                "dominance {:.3} over {} logged k (alpha={}, 1/c1={:.3e}), worst margin {:.3e}; {:.2}s",
                r.theorem1_dominance.fraction,
                r.theorem1_dominance.count,
                cfg.alpha,
                1.0 / r.constants.c1,
                r.theorem1_dominance.worst_margin,
                started.elapsed().as_secs_f64()
            ),
        ),
        Err(e) => verdict(false, format!("{e:#}")),
    }
}

fn criterion_9(problem: &Problem, runs: &[(f64, &Ensemble)]) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (e, ens) in runs {
        let t2 = qlab::bounds::Theorem2Decomposition::new(problem.mdp.discount, *e, *e, problem.mdp.n_actions);
        let bound: Vec<f64> = ens
            .q_gap_sq
            .mean
            .iter()
            .zip(&ens.policy_q_gap_sq.std)
            .map(|(q, s)| t2.bound(*q) + 3.0 * s)
            .collect();
        let report = bound_vs_empirical(&bound, &ens.policy_q_gap_sq.mean).unwrap();
        pass &= report.fraction == 1.0;
        parts.push(format!("eps=tau={e}: {:.3} (worst margin {:.3e})", report.fraction, report.worst_margin));
    }
    verdict(pass, format!("dominance {}", parts.join(", ")))
}

fn criterion_10() -> Verdict {
    let started = Instant::now();
    let mut failures = Vec::new();
    for mdp_seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + mdp_seed);
        let (ns, na) = (4, 3);
        let mdp = random_mdp(&mut rng, ns, na, 0.9);
        let q0 = random_q(&mut rng, ns, na, 10.0);
        let q_star = solve_optimal(&mdp).unwrap();
        for seed in 0..3 {
            let short = |c: LearnerConfig| LearnerConfig { horizon: 20_000, log_stride: 500, seed, ..c };
            let eps = 0.2;
            let cfg = short(LearnerConfig::constant(0.5, eps, 0.5, LearnerMode::OnPolicy, q0.clone()));
            let trace = run(&mdp, &cfg, &q_star).unwrap();
            if trace.max_abs_q > 1.0 / (1.0 - mdp.discount) {
                failures.push(format!("mdp {mdp_seed} seed {seed}: |Q| reached {}", trace.max_abs_q));
            }
            if trace.min_floor_margin < -1e-12 || trace.realized_lambda < eps / na as f64 - 1e-12 {
                failures.push(format!("mdp {mdp_seed} seed {seed}: policy floor margin {}", trace.min_floor_margin));
            }
            if trace != run(&mdp, &cfg, &q_star).unwrap() {
                failures.push(format!("mdp {mdp_seed} seed {seed}: rerun differs"));
            }
            let on = run(&mdp, &short(LearnerConfig::constant(0.3, 1.0, 0.7, LearnerMode::OnPolicy, q0.clone())), &q_star).unwrap();
            let off_mode = LearnerMode::OffPolicy { policy: Policy::uniform(ns, na) };
            let off = run(&mdp, &short(LearnerConfig::constant(0.3, 1.0, 0.7, off_mode, q0.clone())), &q_star).unwrap();
            if on.q_gap != off.q_gap || on.visit_counts != off.visit_counts || on.final_q != off.final_q {
                failures.push(format!("mdp {mdp_seed} seed {seed}: eps=1 on-policy differs from uniform"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("5 MDPs x 3 seeds clean, {:.2}s", started.elapsed().as_secs_f64())
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar probes pass arguments; nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: Verdict| {
        println!("{} criterion {n} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    report(1, "exact solution", criterion_1());
    report(2, "contraction suite", criterion_2());
    report(3, "poisson suite", criterion_3());
    report(4, "mixing certificates", criterion_4());
    report(5, "martingale property", criterion_5());

    let cfg = ExperimentConfig::default();
    let problem = Problem::load(&cfg).unwrap();
    let fig2_started = Instant::now();
    let cmp = compare_on_off(&problem, &cfg).unwrap();
    report(6, "on/off-policy ordering", criterion_6(&cmp.on, &cmp.off, fig2_started.elapsed()));

    // eps = tau = 0.15 is the on-policy run above
    let extra: Vec<(f64, Ensemble)> = [0.10, 0.05]
        .iter()
        .map(|&e| (e, problem.ensemble(&cfg, LearnerMode::OnPolicy, Some(e)).unwrap()))
        .collect();
    let mut runs: Vec<(f64, &Ensemble)> = vec![(cfg.epsilon, &cmp.on)];
    runs.extend(extra.iter().map(|(e, r)| (*e, r)));
    report(7, "exploration ordering", criterion_7(&runs));
    report(8, "mean-square bound dominance", criterion_8());
    report(9, "policy-gap bound check", criterion_9(&problem, &runs));
    report(10, "invariant sweep", criterion_10());

    let passed = results.iter().filter(|r| r.2.pass).count();
    let unexpected: Vec<u32> = results.iter().filter(|r| !r.2.pass && !KNOWN_FAILING.contains(&r.0)).map(|r| r.0).collect();
    let fixed: Vec<u32> = results.iter().filter(|r| r.2.pass && KNOWN_FAILING.contains(&r.0)).map(|r| r.0).collect();
    println!("{passed}/{} criteria pass in {:.1}s", results.len(), started.elapsed().as_secs_f64());
    if !fixed.is_empty() {
        println!("note: criteria {fixed:?} are listed as known failing but passed");
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
