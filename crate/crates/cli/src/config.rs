//! Experiment configuration: built-in defaults, then a replayed CSV header or
//! a TOML file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use qlab::qlearn::{DEFAULT_ALPHA, DEFAULT_HORIZON, DEFAULT_LOG_STRIDE, DEFAULT_SEEDS};

/// Exploration level of the figure runs.
pub const FIGURE_EXPLORATION: f64 = 0.15;
/// Initial `Q0(s, stay)` and `Q0(s, move)` of the figure runs.
pub const FIGURE_Q0: (f64, f64) = (100.0, 90.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdpSource {
    Cyclic { n_states: usize, n_actions: usize, discount: f64 },
    File { path: PathBuf },
}

/// Which policy a command acts on.
///
/// `on` is the on-policy learner (for `analyze`, the mixture-softmax policy
/// of `Q*`); `uniform`, `action:K` and a JSON file are fixed policies.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    OnPolicy,
    Uniform,
    Action(usize),
    File(PathBuf),
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(PolicySpec::OnPolicy),
            "uniform" => Ok(PolicySpec::Uniform),
            _ => match s.strip_prefix("action:") {
                Some(k) => k
                    .parse()
                    .map(PolicySpec::Action)
                    .map_err(|_| format!("bad action index in policy '{s}'")),
                None if s.ends_with(".json") => Ok(PolicySpec::File(PathBuf::from(s))),
                None => Err(format!("unknown policy '{s}' (expected on, uniform, action:K or a .json file)")),
            },
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::OnPolicy => write!(f, "on"),
            PolicySpec::Uniform => write!(f, "uniform"),
            PolicySpec::Action(a) => write!(f, "action:{a}"),
            PolicySpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Initial Q-table: the figure initialisation on the cyclic MDP, or a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialQ {
    StayMove { stay: f64, r#move: f64 },
    Constant { value: f64 },
}

/// Fully resolved configuration; echoed as JSON into every CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub alpha: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub horizon: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub log_stride: usize,
    pub initial_state: usize,
    pub initial_q: InitialQ,
    pub policy: PolicySpec,
    pub xi: Vec<f64>,
    /// Largest power checked by mixing certificates.
    pub k_max: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mdp: MdpSource::Cyclic { n_states: 20, n_actions: 10, discount: 0.99 },
            alpha: DEFAULT_ALPHA,
            epsilon: FIGURE_EXPLORATION,
            tau: FIGURE_EXPLORATION,
            horizon: DEFAULT_HORIZON,
            seeds: DEFAULT_SEEDS,
            base_seed: 0,
            log_stride: DEFAULT_LOG_STRIDE,
            initial_state: 0,
            initial_q: InitialQ::StayMove { stay: FIGURE_Q0.0, r#move: FIGURE_Q0.1 },
            policy: PolicySpec::OnPolicy,
            xi: vec![1.0, 0.5, 0.25],
            k_max: 500,
            out: PathBuf::from("qlab-out"),
        }
    }
}

/// Optional settings shared by the TOML file and the command line.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Built-in cyclic MDP with N states, M actions and discount GAMMA.
    #[arg(long, num_args = 3, value_names = ["N", "M", "GAMMA"], conflicts_with = "mdp")]
    pub cyclic: Option<Vec<f64>>,
    /// MDP in the JSON interchange format.
    #[arg(long, value_name = "PATH")]
    pub mdp: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub log_stride: Option<usize>,
    #[arg(long)]
    pub initial_state: Option<usize>,
    /// Constant initial Q-table instead of the stay/move initialisation.
    #[arg(long, value_name = "VALUE")]
    pub q0: Option<f64>,
    /// on | uniform | action:K | FILE.json
    #[arg(long)]
    pub policy: Option<PolicySpec>,
    /// Comma-separated accuracy targets for the sample-complexity table.
    #[arg(long, value_delimiter = ',')]
    pub xi: Option<Vec<f64>>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || !v.is_finite() {
        bail!("--cyclic {name} must be a non-negative integer, got {v}");
    }
    Ok(v as usize)
}

impl Settings {
    pub fn from_toml_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(c) = &self.cyclic {
            if c.len() != 3 {
                bail!("cyclic needs exactly three values N M GAMMA, got {}", c.len());
            }
            cfg.mdp = MdpSource::Cyclic {
                n_states: as_count("N", c[0])?,
                n_actions: as_count("M", c[1])?,
                discount: c[2],
            };
        }
        if let Some(p) = &self.mdp {
            cfg.mdp = MdpSource::File { path: p.clone() };
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        take!(alpha, epsilon, tau, horizon, seeds, base_seed, log_stride, initial_state, policy, xi, k_max, out);
        if let Some(v) = self.q0 {
            cfg.initial_q = InitialQ::Constant { value: v };
        }
        Ok(())
    }
}

/// Reads the `# config:` line from the metadata header of a CSV written by
/// this tool.
pub fn config_from_csv(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(json) = line.strip_prefix("# config: ") {
            return serde_json::from_str(json).with_context(|| format!("parsing config echo in {}", path.display()));
        }
    }
    bail!("{} has no '# config:' metadata line", path.display())
}

/// Defaults, then `replay`, then the TOML file, then the flags.
pub fn resolve(replay: Option<&Path>, file: Option<&Path>, flags: &Settings) -> Result<ExperimentConfig> {
    let mut cfg = match replay {
        Some(p) => config_from_csv(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = file {
        Settings::from_toml_file(p)?.apply(&mut cfg)?;
    }
    flags.apply(&mut cfg)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_spec_roundtrip() {
        for s in ["on", "uniform", "action:3", "pi.json"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
        assert!("greedy".parse::<PolicySpec>().is_err());
        assert!("action:x".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn toml_then_flags() {
        let file: Settings = toml::from_str("cyclic = [4, 2, 0.8]\nalpha = 0.01\nseeds = 3\nxi = [0.5, 0.25]").unwrap();
        let mut cfg = ExperimentConfig::default();
        file.apply(&mut cfg).unwrap();
        let flags = Settings { seeds: Some(5), ..Default::default() };
        flags.apply(&mut cfg).unwrap();
        assert_eq!(cfg.mdp, MdpSource::Cyclic { n_states: 4, n_actions: 2, discount: 0.8 });
        assert_eq!((cfg.alpha, cfg.seeds, cfg.xi.clone()), (0.01, 5, vec![0.5, 0.25]));
    }

    #[test]
    fn unknown_toml_key_rejected() {
        assert!(toml::from_str::<Settings>("alpah = 0.1").is_err());
    }

    #[test]
    fn fractional_state_count_rejected() {
        let s = Settings { cyclic: Some(vec![4.5, 2.0, 0.9]), ..Default::default() };
        assert!(s.apply(&mut ExperimentConfig::default()).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = ExperimentConfig { policy: PolicySpec::Action(1), ..Default::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }
}
