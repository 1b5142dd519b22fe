//! Subcommand drivers: compute, write CSV/JSON under `cfg.out`, print a
//! short summary to stdout.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use qlab::qlearn::{Ensemble, LearnerMode};

use crate::config::ExperimentConfig;
use crate::experiments::{self, fixed_policy, ordering_count, tail_mean, Comparison, Problem};
use crate::output::{self, header, out_path, seed_list, Table};

/// Fraction of logged points, after this leading fraction, checked for the
/// on/off-policy ordering.
pub const BURN_IN: f64 = 0.1;
/// Fraction of trailing logged points averaged for final policy gaps.
pub const FINAL_WINDOW: f64 = 0.1;

fn finish(mut table: Table, started: Instant, cfg: &ExperimentConfig, file: &str) -> Result<PathBuf> {
    table.meta("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    let path = out_path(cfg, file)?;
    table.write(&path)?;
    Ok(path)
}

fn write_json<T: Serialize>(cfg: &ExperimentConfig, file: &str, value: &T) -> Result<PathBuf> {
    let path = out_path(cfg, file)?;
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

fn ensemble_header(table: &mut Table, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    header(table, command, cfg)?;
    table.meta("seeds", seed_list(cfg));
    Ok(())
}

pub fn solve(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let report = experiments::solve(cfg)?;
    let (ns, na) = (report.q_star.n_states, report.q_star.n_actions);
    for s in 0..ns {
        let row: Vec<String> = report.q_star.row(s).iter().map(|v| format!("{v:.6}")).collect();
        println!("s{s}: {}", row.join(" "));
    }
    let mut table = Table::new(output::SOLVE);
    header(&mut table, "solve", cfg)?;
    table.meta("policy", &cfg.policy);
    for s in 0..ns {
        for a in 0..na {
            table.push(vec![
                s as f64,
                a as f64,
                report.q_star.get(s, a),
                report.q_policy.get(s, a),
                report.greedy.get(s, a),
            ]);
        }
    }
    let path = finish(table, started, cfg, "solve.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = Problem::load(cfg)?;
    let mode = match fixed_policy(&cfg.policy, &problem.mdp)? {
        Some(policy) => LearnerMode::OffPolicy { policy },
        None => LearnerMode::OnPolicy,
    };
    let e = problem.ensemble(cfg, mode, None)?;
    let mut table = Table::new(output::RUN);
    ensemble_header(&mut table, "run", cfg)?;
    table.meta("realized_lambda", e.realized_lambda);
    for (i, &k) in e.logged_iterations.iter().enumerate() {
        table.push(vec![k as f64, e.q_gap.mean[i], e.q_gap.std[i], e.policy_q_gap.mean[i], e.policy_q_gap.std[i]]);
    }
    println!("final mean q_gap {:.6}, policy_q_gap {:.6}", e.q_gap.mean.last().unwrap(), e.policy_q_gap.mean.last().unwrap());
    let path = finish(table, started, cfg, "run.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn analyze(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let report = experiments::analyze(cfg)?;
    println!("state chain irreducible: {}", report.state_chain_irreducible);
    println!("joint chain irreducible: {}", report.joint_chain_irreducible);
    if let Some(ec) = &report.exploration_constants {
        println!("r_b={} delta_b={:e} mu_min={:e} pi_b_min={:e}", ec.r, ec.delta, ec.mu_min, ec.pi_b_min);
    }
    for (name, check) in [("empirical", &report.empirical), ("certified", &report.certified)] {
        if let Some(c) = check {
            println!(
                "{name} certificate c={:.6} rho={:.9}: {} of {} steps pass",
                c.certificate.c,
                c.certificate.rho,
                c.checks.len() - c.violations(),
                c.checks.len()
            );
        }
    }
    if let Some(p) = &report.poisson {
        println!(
            "poisson: max |series - direct| {:e}, residuals {:e} / {:e}, bound holds {}",
            p.max_difference, p.series_residual, p.direct_residual, p.bound_holds
        );
    }
    for s in &report.skipped {
        println!("skipped: {s}");
    }
    write_json(cfg, "analyze.json", &report)?;
    if let Some(weights) = &report.stationary {
        let na = experiments::load_mdp(&cfg.mdp)?.n_actions;
        let mut table = Table::new(output::STATIONARY);
        header(&mut table, "analyze", cfg)?;
        for (i, w) in weights.iter().enumerate() {
            table.push(vec![(i / na) as f64, (i % na) as f64, *w]);
        }
        finish(table, started, cfg, "stationary.csv")?;
    }
    let mut table = Table::new(output::CERTIFICATES);
    header(&mut table, "analyze", cfg)?;
    for (kind, check) in [(0.0, &report.empirical), (1.0, &report.certified)] {
        if let Some(c) = check {
            table.meta(if kind == 0.0 { "empirical" } else { "certified" }, serde_json::to_string(&c.certificate)?);
            for k in &c.checks {
                table.push(vec![kind, k.k as f64, k.distance, k.bound, if k.pass { 1.0 } else { 0.0 }]);
            }
        }
    }
    let path = finish(table, started, cfg, "certificates.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn bounds(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let r = experiments::bounds(cfg)?;
    let c = &r.constants;
    println!("c1={:e} c2={:e} c3={:e} c4={:e} (lambda={})", c.c1, c.c2, c.c3, c.c4, r.lambda_surrogate);
    println!("mean-square bound dominance {:.3} (worst margin {:e})", r.theorem1_dominance.fraction, r.theorem1_dominance.worst_margin);
    println!("policy-gap bound dominance {:.3} (worst margin {:e})", r.theorem2_dominance.fraction, r.theorem2_dominance.worst_margin);
    for (xi, plain, logged) in &r.complexity {
        println!("xi={xi}: k={:e} (alpha={:e}), log-aware k={:e}", plain.iterations, plain.alpha, logged.iterations);
    }
    write_json(cfg, "bounds.json", &r)?;

    let e = &r.ensemble;
    let mut table = Table::new(output::BOUNDS);
    ensemble_header(&mut table, "bounds", cfg)?;
    table.meta("realized_lambda", r.lambda_realized);
    table.meta("theorem1_constants", serde_json::to_string(&r.constants)?);
    for (i, &k) in e.logged_iterations.iter().enumerate() {
        table.push(vec![
            k as f64,
            e.q_gap_sq.mean[i],
            r.theorem1.values[i],
            e.policy_q_gap_sq.mean[i],
            e.policy_q_gap_sq.std[i],
            r.theorem2_values[i],
        ]);
    }
    finish(table, started, cfg, "bounds.csv")?;

    let mut table = Table::new(output::COMPLEXITY);
    header(&mut table, "bounds", cfg)?;
    for (xi, plain, logged) in &r.complexity {
        table.push(vec![*xi, plain.alpha, plain.iterations, logged.alpha, logged.iterations]);
    }
    let path = finish(table, started, cfg, "complexity.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn fig2_table(cfg: &ExperimentConfig, cmp: &Comparison) -> Result<Table> {
    let mut table = Table::new(output::FIG2);
    ensemble_header(&mut table, "reproduce fig2", cfg)?;
    table.meta("realized_lambda", format!("onpolicy={} offpolicy={}", cmp.on.realized_lambda, cmp.off.realized_lambda));
    let (on, off) = (&cmp.on, &cmp.off);
    for (i, &k) in on.logged_iterations.iter().enumerate() {
        table.push(vec![k as f64, on.q_gap.mean[i], on.q_gap.std[i], off.q_gap.mean[i], off.q_gap.std[i]]);
    }
    Ok(table)
}

pub fn fig3_table(cfg: &ExperimentConfig, cmp: &Comparison) -> Result<Table> {
    let mut table = Table::new(output::FIG3);
    ensemble_header(&mut table, "reproduce fig3", cfg)?;
    table.meta("realized_lambda", format!("onpolicy={} offpolicy={}", cmp.on.realized_lambda, cmp.off.realized_lambda));
    let (on, off) = (&cmp.on, &cmp.off);
    for (i, &k) in on.logged_iterations.iter().enumerate() {
        table.push(vec![k as f64, on.policy_q_gap.mean[i], on.policy_q_gap.std[i], off.policy_q_gap.mean[i]]);
    }
    Ok(table)
}

pub fn fig4_table(cfg: &ExperimentConfig, runs: &[(f64, Ensemble)]) -> Result<Table> {
    let mut table = Table::new(output::FIG4);
    ensemble_header(&mut table, "reproduce fig4", cfg)?;
    let lambdas: Vec<String> = runs.iter().map(|(e, r)| format!("eps_tau_{e}={}", r.realized_lambda)).collect();
    table.meta("realized_lambda", lambdas.join(" "));
    for (i, &k) in runs[0].1.logged_iterations.iter().enumerate() {
        let mut row = vec![k as f64];
        for (_, r) in runs {
            row.push(r.policy_q_gap.mean[i]);
            row.push(r.policy_q_gap.std[i]);
        }
        table.push(row);
    }
    Ok(table)
}

/// On-policy ensembles at each exploration level of the fig4 schema.
pub fn fig4_runs(problem: &Problem, cfg: &ExperimentConfig) -> Result<Vec<(f64, Ensemble)>> {
    output::FIG4_SETTINGS
        .iter()
        .map(|&e| Ok((e, problem.ensemble(cfg, LearnerMode::OnPolicy, Some(e))?)))
        .collect()
}

pub fn reproduce_fig2(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = Problem::load(cfg)?;
    let cmp = experiments::compare_on_off(&problem, cfg)?;
    let (held, total) = ordering_count(&cmp.off.q_gap.mean, &cmp.on.q_gap.mean, BURN_IN);
    println!("off-policy mean gap <= on-policy mean gap at {held} of {total} logged points after burn-in");
    let path = finish(fig2_table(cfg, &cmp)?, started, cfg, "fig2.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn reproduce_fig3(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = Problem::load(cfg)?;
    let cmp = experiments::compare_on_off(&problem, cfg)?;
    println!(
        "final on-policy policy gap {:.6} vs off-policy {:.6}",
        tail_mean(&cmp.on.policy_q_gap.mean, FINAL_WINDOW),
        cmp.off.policy_q_gap.mean[0]
    );
    let path = finish(fig3_table(cfg, &cmp)?, started, cfg, "fig3.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn reproduce_fig4(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let problem = Problem::load(cfg)?;
    let runs = fig4_runs(&problem, cfg)?;
    for (e, r) in &runs {
        println!("eps=tau={e}: final policy gap {:.6}", tail_mean(&r.policy_q_gap.mean, FINAL_WINDOW));
    }
    let path = finish(fig4_table(cfg, &runs)?, started, cfg, "fig4.csv")?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
