//! `covsel`: generate a synthetic DUT and test pool, run novelty-driven
//! selection on it, and compare scorers against random ordering.

mod commands;
mod manifest;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;

use commands::Outcome;
use manifest::{RunManifest, MANIFEST_FILE};
use settings::{
    read_config, resolve, ExperimentFlags, ExperimentSettings, GenFlags, GenSettings, RunFlags, RunSettings,
};

#[derive(Parser)]
#[command(
    name = "covsel",
    version,
    about = "Novelty-driven test selection for coverage closure"
)]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON file with `gen`, `run` and `experiment` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a DUT, its schema and a test pool.
    Gen(GenFlags),
    /// Run one selection loop over a generated pool.
    Run(RunFlags),
    /// Repeat every scorer and compare against random ordering.
    Experiment(ExperimentFlags),
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write here instead of the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless every reproducible output matches the manifest.
        #[arg(long)]
        verify: bool,
    },
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn settings_from<T: DeserializeOwned>(manifest: &RunManifest, out: &Path) -> Result<T> {
    let mut s = manifest.settings.clone();
    s["out"] = Value::String(out.to_string_lossy().into_owned());
    Ok(serde_json::from_value(s)?)
}

fn replay(manifest_path: &Path, out: Option<&Path>, verify: bool) -> Result<Outcome> {
    let recorded = RunManifest::load(manifest_path)?;
    let out = match out {
        Some(o) => absolute(o)?,
        None => absolute(manifest_path.parent().unwrap_or(Path::new(".")))?,
    };
    let config = recorded.config_file.as_deref();
    let outcome = match recorded.command.as_str() {
        "gen" => commands::gen(&settings_from(&recorded, &out)?, true, config)?,
        "run" => commands::run(&settings_from(&recorded, &out)?, false, true, None, config)?,
        "experiment" => commands::experiment(&settings_from(&recorded, &out)?, config)?,
        other => bail!("manifest records unknown command `{other}`"),
    };
    if verify {
        let fresh = RunManifest::load(&out.join(MANIFEST_FILE))?;
        let mut mismatched = Vec::new();
        for a in recorded.artifacts.iter().filter(|a| a.deterministic) {
            match fresh.artifacts.iter().find(|b| b.path == a.path) {
                Some(b) if b.sha256 == a.sha256 => {}
                _ => mismatched.push(a.path.display().to_string()),
            }
        }
        if !mismatched.is_empty() {
            bail!("replay differs from the manifest in: {}", mismatched.join(", "));
        }
    }
    Ok(outcome)
}

fn execute(cli: Cli) -> Result<Outcome> {
    let config_path = cli.config.as_deref().map(absolute).transpose()?;
    let config = config_path.as_deref().map(read_config).transpose()?;
    let config_ref = config.as_ref();
    match cli.command {
        Command::Gen(flags) => {
            let mut s: GenSettings = resolve("gen", config_ref, &flags)?;
            s.out = Some(absolute(&settings::output_dir(s.out.as_deref(), "gen"))?);
            commands::gen(&s, flags.force, config_path.as_deref())
        }
        Command::Run(flags) => {
            let mut s: RunSettings = resolve("run", config_ref, &flags)?;
            s.input = absolute(&s.input)?;
            s.out = Some(absolute(&settings::output_dir(s.out.as_deref(), "run"))?);
            commands::run(
                &s,
                flags.resume,
                flags.force,
                flags.halt_after_round,
                config_path.as_deref(),
            )
        }
        Command::Experiment(flags) => {
            let mut s: ExperimentSettings = resolve("experiment", config_ref, &flags)?;
            s.input = absolute(&s.input)?;
            s.out = Some(absolute(&settings::output_dir(s.out.as_deref(), "experiment"))?);
            commands::experiment(&s, config_path.as_deref())
        }
        Command::Replay { manifest, out, verify } => replay(&manifest, out.as_deref(), verify),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let result = builder
        .build()
        .context("starting worker threads")
        .and_then(|pool| pool.install(|| execute(cli)));
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Halted) => {
            eprintln!("halted after checkpoint; continue with --resume");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
