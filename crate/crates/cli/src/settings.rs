//! Command flags and their resolution against a JSON config file.
//!
//! Flags override the config file's section for the command, which
//! overrides the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const OUT_ROOT_ENV: &str = "COVSEL_OUT_ROOT";

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenFlags {
    /// DUT seed; also fixes the pool.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Output directory; defaults to `$COVSEL_OUT_ROOT/gen`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSettings {
    pub seed: u64,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_events")]
    pub events: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunFlags {
    /// autoencoder, density, coverage-novelty or random.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub initial: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub seed_model: Option<u64>,
    /// Seed for the initial tests and sampled events; defaults to the model seed.
    #[arg(long)]
    pub seed_sampling: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Directory written by `gen`.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    #[serde(skip)]
    pub resume: bool,
    /// Discard an existing checkpoint and start over.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
    /// Stop with exit code 3 after checkpointing this round.
    #[arg(long, hide = true)]
    #[serde(skip)]
    pub halt_after_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_scorer")]
    pub scorer: String,
    #[serde(default = "default_run_target")]
    pub target: f64,
    #[serde(default = "default_initial")]
    pub initial: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    pub seed_model: u64,
    #[serde(default)]
    pub seed_sampling: Option<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub input: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentFlags {
    /// Comma-separated scorer names, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub scorers: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub baseline_reps: Option<usize>,
    /// Rank of the baseline run used as reference; defaults to the 1% quantile.
    #[arg(long)]
    pub baseline_rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<f64>>,
    #[arg(long)]
    pub initial: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Experiment seed; per-repetition seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    #[serde(default = "default_scorers")]
    pub scorers: Vec<String>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_baseline_reps")]
    pub baseline_reps: usize,
    #[serde(default)]
    pub baseline_rank: Option<usize>,
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    #[serde(default = "default_initial")]
    pub initial: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub seed: u64,
    pub input: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_features() -> usize {
    64
}
fn default_events() -> usize {
    800
}
fn default_pool_size() -> usize {
    20_000
}
fn default_scorer() -> String {
    "autoencoder".into()
}
fn default_run_target() -> f64 {
    0.99
}
fn default_initial() -> usize {
    100
}
fn default_batch() -> usize {
    1000
}
fn default_epochs() -> usize {
    30
}
fn default_scorers() -> Vec<String> {
    vec!["all".into()]
}
fn default_reps() -> usize {
    10
}
fn default_baseline_reps() -> usize {
    500
}
fn default_targets() -> Vec<f64> {
    vec![0.95, 0.99, 0.995]
}

pub fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !value.is_object() {
        bail!("config {} must be a JSON object", path.display());
    }
    Ok(value)
}

/// Merges `flags` over `config[section]` and fills the remaining defaults.
pub fn resolve<T: DeserializeOwned>(section: &str, config: Option<&Value>, flags: &impl Serialize) -> Result<T> {
    let mut merged = Map::new();
    if let Some(s) = config.and_then(|c| c.get(section)) {
        let Value::Object(m) = s else {
            bail!("config section `{section}` must be an object");
        };
        merged.extend(m.clone());
    }
    let Value::Object(given) = serde_json::to_value(flags)? else {
        bail!("flags for `{section}` did not serialize to an object");
    };
    for (key, flag) in [("seed", "--seed"), ("seed_model", "--seed-model"), ("input", "--in")] {
        let given_now = given.get(key).is_some_and(|v| !v.is_null());
        if given.contains_key(key) && !given_now && !merged.contains_key(key) {
            bail!("{flag} is required (on the command line or in the config file)");
        }
    }
    merged.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid `{section}` settings"))
}

/// `out` if given, else `$COVSEL_OUT_ROOT/<command>` (or `./covsel-out/<command>`).
pub fn output_dir(out: Option<&Path>, command: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("covsel-out"))
            .join(command),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn gen_flags() -> GenFlags {
        GenFlags {
            seed: None,
            features: Some(16),
            events: None,
            pool_size: None,
            out: None,
            force: false,
        }
    }

    #[test]
    fn flags_override_config_override_defaults() {
        let cfg = json!({"gen": {"seed": 4, "features": 32, "events": 100}});
        let s: GenSettings = resolve("gen", Some(&cfg), &gen_flags()).unwrap();
        assert_eq!((s.seed, s.features, s.events, s.pool_size), (4, 16, 100, 20_000));
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = resolve::<GenSettings>("gen", None, &gen_flags()).unwrap_err();
        assert!(err.to_string().contains("--seed"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let cfg = json!({"gen": {"seed": 1, "featurs": 3}});
        assert!(resolve::<GenSettings>("gen", Some(&cfg), &gen_flags()).is_err());
    }
}
