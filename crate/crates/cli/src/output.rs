//! CSV tables with a `#`-prefixed metadata header.
//!
//! Every file starts with `# key: value` lines (tool version, schema id,
//! command, resolved config as JSON, RNG, seeds, realized lambda, wall time)
//! followed by a single header row and comma-separated data rows. Column
//! sets are versioned by the schema id; changing a column list means bumping
//! the version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

impl Schema {
    pub fn id(&self) -> String {
        format!("{}/v{}", self.name, self.version)
    }
}

/// `||Q_k - Q*||_inf` bands of the on-policy and uniform off-policy learners.
pub const FIG2: Schema = Schema {
    name: "fig2",
    version: 1,
    columns: &["iteration", "onpolicy_mean", "onpolicy_std", "offpolicy_mean", "offpolicy_std"],
};

/// `||Q^{pi_k} - Q*||_inf`; the off-policy column is the fixed uniform
/// policy's gap.
pub const FIG3: Schema = Schema {
    name: "fig3",
    version: 1,
    columns: &["iteration", "onpolicy_policy_gap_mean", "onpolicy_policy_gap_std", "offpolicy_policy_gap"],
};

/// On-policy policy gap for each exploration level `eps = tau`.
pub const FIG4: Schema = Schema {
    name: "fig4",
    version: 1,
    columns: &[
        "iteration",
        "eps_tau_0.15_mean",
        "eps_tau_0.15_std",
        "eps_tau_0.10_mean",
        "eps_tau_0.10_std",
        "eps_tau_0.05_mean",
        "eps_tau_0.05_std",
    ],
};

/// Exploration levels of [`FIG4`], in column order.
pub const FIG4_SETTINGS: [f64; 3] = [0.15, 0.10, 0.05];

/// Ensemble of a single learner configuration.
pub const RUN: Schema = Schema {
    name: "run",
    version: 1,
    columns: &["iteration", "q_gap_mean", "q_gap_std", "policy_q_gap_mean", "policy_q_gap_std"],
};

/// `greedy` is 1 on the action picked by the greedy policy of `Q*`.
pub const SOLVE: Schema = Schema {
    name: "solve",
    version: 1,
    columns: &["state", "action", "q_star", "q_policy", "greedy"],
};

/// Bound curves against ensemble means of squared gaps.
pub const BOUNDS: Schema = Schema {
    name: "bounds",
    version: 1,
    columns: &[
        "iteration",
        "q_gap_sq_mean",
        "theorem1_bound",
        "policy_gap_sq_mean",
        "policy_gap_sq_std",
        "theorem2_bound",
    ],
};

/// Sample complexity for each accuracy target; `alpha` is the matching stepsize.
pub const COMPLEXITY: Schema = Schema {
    name: "complexity",
    version: 1,
    columns: &["xi", "alpha", "iterations", "alpha_log_aware", "iterations_log_aware"],
};

/// Joint stationary distribution, one row per state-action pair.
pub const STATIONARY: Schema = Schema {
    name: "stationary",
    version: 1,
    columns: &["state", "action", "weight"],
};

/// Per-step certificate verdicts; `kind` is 0 for empirical, 1 for certified.
pub const CERTIFICATES: Schema = Schema {
    name: "certificates",
    version: 1,
    columns: &["kind", "k", "distance", "bound", "pass"],
};

pub const ALL_SCHEMAS: [Schema; 9] = [FIG2, FIG3, FIG4, RUN, SOLVE, BOUNDS, COMPLEXITY, STATIONARY, CERTIFICATES];

#[derive(Debug, Clone)]
pub struct Table {
    pub schema: Schema,
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Table { schema, metadata: Vec::new(), rows: Vec::new() }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        // keep every entry on one line
        self.metadata.push((key.to_string(), value.to_string().replace('\n', " ")));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.schema.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "# qlab {VERSION}")?;
        writeln!(file, "# schema: {}", self.schema.id())?;
        for (k, v) in &self.metadata {
            writeln!(file, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(self.schema.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_value(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-tripping decimal, with integers printed without a
/// fractional part.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Standard header shared by every command.
pub fn header(table: &mut Table, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    table.meta("command", command);
    table.meta("config", serde_json::to_string(cfg)?);
    table.meta("rng", qlab::qlearn::RNG_NAME);
    Ok(())
}

pub fn seed_list(cfg: &ExperimentConfig) -> String {
    (0..cfg.seeds as u64)
        .map(|i| cfg.base_seed.wrapping_add(i).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn out_path(cfg: &ExperimentConfig, file: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(cfg.out.join(file))
}

/// Metadata pairs, header and rows of a table read back from disk.
pub type ParsedTable = (Vec<(String, String)>, Vec<String>, Vec<Vec<f64>>);

/// Parses a file written by [`Table::write`].
pub fn read_table(path: &Path) -> Result<ParsedTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(m) if body.is_empty() => {
                let (k, v) = m.split_once(": ").unwrap_or((m, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| -> Result<Vec<f64>> {
            rec?.iter().map(|f| f.parse::<f64>().with_context(|| format!("bad number '{f}'"))).collect()
        })
        .collect::<Result<_>>()?;
    Ok((meta, header, rows))
}
