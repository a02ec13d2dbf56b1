//! JSON run description.
//!
//! ```json
//! {
//!   "env": {"fixture": "E_star"},
//!   "command": "exact",
//!   "horizons": [1, 2, 5, 10],
//!   "nmax": 1000
//! }
//! ```
//!
//! `env` is either `{"fixture": name}` or `{"kind": ..., "base": [a, b, d, θ], ...}`
//! with `delta` + `rate` (geometric), `delta` + `exponent` (power) or
//! `rows` + `continuation` (table). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use lfbp_core::env::{Continuation, EnvFamily};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Conditions,
    Exact,
    Cfrac,
    Verify,
    Simulate,
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub fixture: Option<String>,
    pub kind: Option<String>,
    pub base: Option<[f64; 4]>,
    pub delta: Option<[f64; 4]>,
    pub rate: Option<f64>,
    pub exponent: Option<f64>,
    pub rows: Option<Vec<[f64; 4]>>,
    pub continuation: Option<Continuation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Stopping tolerance for continued-fraction tails.
    pub tail: f64,
    /// Threshold below which coefficient differences count as zero.
    pub b2_eq: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tail: 1e-13,
            b2_eq: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: EnvConfig,
    #[serde(default)]
    command: Command,
    #[serde(default = "default_horizons")]
    horizons: Vec<usize>,
    #[serde(default = "default_nmax")]
    nmax: usize,
    #[serde(default = "default_kmax")]
    kmax: usize,
    #[serde(default = "default_rfm_span")]
    rfm_span: usize,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_replicates")]
    replicates: u64,
    #[serde(default = "default_start_types")]
    start_types: Vec<usize>,
    #[serde(default = "default_out")]
    out: PathBuf,
    #[serde(default)]
    format: Format,
    threads: Option<usize>,
}

fn default_horizons() -> Vec<usize> {
    (0..=30).collect()
}
fn default_nmax() -> usize {
    1000
}
fn default_kmax() -> usize {
    50
}
fn default_rfm_span() -> usize {
    200
}
fn default_replicates() -> u64 {
    100_000
}
fn default_start_types() -> Vec<usize> {
    vec![1, 2]
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvFamily,
    pub env_config: EnvConfig,
    /// Fixture name or family kind.
    pub env_label: String,
    pub command: Command,
    pub horizons: Vec<usize>,
    pub nmax: usize,
    pub kmax: usize,
    pub rfm_span: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub replicates: u64,
    pub start_types: Vec<usize>,
    pub out: PathBuf,
    pub format: Format,
    pub threads: Option<usize>,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let bad = |m: String| Err(CliError::Config(m));
    if raw.horizons.is_empty() {
        return bad("horizons: must not be empty".into());
    }
    if let Some(w) = raw.horizons.windows(2).find(|w| w[0] >= w[1]) {
        return bad(format!("horizons: must be strictly increasing ({} then {})", w[0], w[1]));
    }
    for (key, v) in [("tolerances.tail", raw.tolerances.tail), ("tolerances.b2_eq", raw.tolerances.b2_eq)] {
        if !(v.is_finite() && v > 0.0) {
            return bad(format!("{key}: must be positive, got {v}"));
        }
    }
    if raw.nmax < 2 {
        return bad(format!("nmax: must be at least 2, got {}", raw.nmax));
    }
    if raw.kmax == 0 {
        return bad("kmax: must be at least 1".into());
    }
    if raw.replicates == 0 {
        return bad("replicates: must be at least 1".into());
    }
    if raw.start_types.is_empty() || raw.start_types.iter().any(|t| !(1..=2).contains(t)) {
        return bad(format!("start_types: entries must be 1 or 2, got {:?}", raw.start_types));
    }
    if raw.threads == Some(0) {
        return bad("threads: must be at least 1".into());
    }
    let (env, env_label) = crate::build_env(&raw.env).map_err(CliError::Config)?;
    Ok(RunConfig {
        env,
        env_config: raw.env,
        env_label,
        command: raw.command,
        horizons: raw.horizons,
        nmax: raw.nmax,
        kmax: raw.kmax,
        rfm_span: raw.rfm_span,
        tolerances: raw.tolerances,
        seed: raw.seed,
        replicates: raw.replicates,
        start_types: raw.start_types,
        out: raw.out,
        format: raw.format,
        threads: raw.threads,
    })
}
