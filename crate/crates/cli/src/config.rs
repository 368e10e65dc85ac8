//! Experiment configuration: an optional TOML file, overridden field by
//! field by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use vpem::consensus::ConsensusConfig;
use vpem::gmm::{EmOptions, InitStrategy, StopSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Fl,
    Decentralized,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Fl => "fl",
            Mode::Decentralized => "decentralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Even,
    Scattered,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    pub m: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    2.0
}

impl std::str::FromStr for SyntheticSpec {
    type Err = String;

    /// `K:D:M` or `K:D:M:SEPARATION`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected K:D:M[:SEPARATION], got `{s}`"));
        }
        let int = |p: &str| p.parse::<usize>().map_err(|e| format!("`{p}`: {e}"));
        Ok(SyntheticSpec {
            k: int(parts[0])?,
            d: int(parts[1])?,
            m: int(parts[2])?,
            separation: match parts.get(3) {
                Some(p) => p.parse().map_err(|e| format!("`{p}`: {e}"))?,
                None => default_separation(),
            },
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusFile {
    pub rounds: Option<usize>,
    pub exact: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopFile {
    pub tol_abs: Option<f64>,
    pub tol_rel: Option<f64>,
    pub max_iters: Option<usize>,
}

/// Contents of `--config`. Relative paths are resolved against the file's
/// directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub data: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub label_column: Option<String>,
    pub standardize: Option<bool>,
    pub graph: Option<String>,
    pub weights: Option<String>,
    pub agents: Option<usize>,
    pub assignment: Option<PathBuf>,
    pub scheme: Option<Scheme>,
    pub hops: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<InitStrategy>,
    pub batch: Option<usize>,
    pub restarts: Option<usize>,
    pub deterministic_ties: Option<bool>,
    pub reseed_empty: Option<bool>,
    pub reg_scale: Option<f64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub consensus: ConsensusFile,
    #[serde(default)]
    pub stop: StopFile,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.assignment, &mut cfg.out_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(g) = cfg.graph.as_mut() {
            if let Some(rest) = g.strip_prefix("file:") {
                if Path::new(rest).is_relative() {
                    *g = format!("file:{}", base.join(rest).display());
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Fully resolved fit configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub label_column: Option<String>,
    pub standardize: bool,
    pub graph: Option<String>,
    pub weights: Option<String>,
    pub agents: Option<usize>,
    pub assignment: Option<PathBuf>,
    pub scheme: Scheme,
    pub hops: usize,
    pub k: usize,
    pub seed: u64,
    pub init: InitStrategy,
    pub batch: Option<usize>,
    pub restarts: usize,
    pub deterministic_ties: bool,
    pub consensus: ConsensusConfig,
    pub stop: StopSpec,
    pub opts: EmOptions,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Mode-specific requirements, checked before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("--k must be at least 1");
        }
        if self.restarts == 0 {
            bail!("--restarts must be at least 1");
        }
        match self.mode {
            Mode::Decentralized if self.graph.is_none() => bail!("mode decentralized needs a graph (--graph)"),
            Mode::Fl if self.agents.is_none() && self.assignment.is_none() => {
                bail!("mode fl needs the number of clients (--agents) or an assignment file (--assignment)")
            }
            Mode::Centralized | Mode::Fl if self.graph.is_some() => {
                bail!("--graph only applies to mode decentralized")
            }
            _ => {}
        }
        if self.mode != Mode::Decentralized && (self.hops != 0 || self.weights.is_some()) {
            bail!("--hops and --weights only apply to mode decentralized");
        }
        Ok(())
    }
}
