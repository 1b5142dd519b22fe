//! Command-line driver for the `qlab` library: solve MDPs, analyse chains,
//! simulate learners, evaluate bounds and regenerate the figure data.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use config::{resolve, Settings};

#[derive(Debug, Parser)]
#[command(name = "qlab", version, about = "Tabular Q-learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML file with any of the flag settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Re-run with the configuration echoed in a CSV written by this tool.
    #[arg(long, global = true, value_name = "CSV")]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal Q-function, Q of the chosen policy and the greedy policy.
    Solve(Common),
    /// Seeded learner ensemble (on-policy, or off-policy with a fixed --policy).
    Run(Common),
    /// Stationary distribution, mixing certificates and Poisson cross-check.
    Analyze(Common),
    /// Finite-time bounds against an on-policy ensemble.
    Bounds(Common),
    /// Regenerate the data behind a figure.
    Reproduce {
        figure: Figure,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Cli {
    pub fn execute(&self) -> Result<()> {
        let common = match &self.command {
            Command::Solve(c) | Command::Run(c) | Command::Analyze(c) | Command::Bounds(c) => c,
            Command::Reproduce { common, .. } => common,
        };
        let cfg = resolve(common.replay.as_deref(), common.config.as_deref(), &common.settings)?;
        match &self.command {
            Command::Solve(_) => commands::solve(&cfg),
            Command::Run(_) => commands::run(&cfg),
            Command::Analyze(_) => commands::analyze(&cfg),
            Command::Bounds(_) => commands::bounds(&cfg),
            Command::Reproduce { figure: Figure::Fig2, .. } => commands::reproduce_fig2(&cfg),
            Command::Reproduce { figure: Figure::Fig3, .. } => commands::reproduce_fig3(&cfg),
            Command::Reproduce { figure: Figure::Fig4, .. } => commands::reproduce_fig4(&cfg),
        }
    }
}
