use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use covsel_core::encoding::{read_pool, write_pool, Schema, TestVector};
use covsel_core::experiment::{run_experiment, write_outputs, ExperimentConfig};
use covsel_core::scorers::{ScorerConfig, ScorerKind};
use covsel_core::selection::{
    trainer_for, LoopConfig, LoopSeeds, LoopState, ScorerTrainer, SelectionLoop, SelectionPolicy,
};
use covsel_core::sim::{DutConfig, SyntheticDut, TierMix};

use crate::manifest::{artifact, RunManifest};
use crate::settings::{output_dir, ExperimentSettings, GenSettings, RunSettings};

pub const DUT_FILE: &str = "dut.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const POOL_FILE: &str = "pool.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// How a command ended when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Stopped on request with a checkpoint but without final outputs.
    Halted,
}

fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    let non_empty = dir.exists()
        && std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
    if non_empty && !force {
        bail!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        );
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen(settings: &GenSettings, force: bool, config: Option<&Path>) -> Result<Outcome> {
    let out = output_dir(settings.out.as_deref(), "gen");
    prepare_out(&out, force)?;
    let mut dut_cfg = DutConfig::new(settings.seed, settings.features, settings.events, TierMix::DESK);
    // every event must be reachable from the pool that gets written
    dut_cfg.reference_pool_size = settings.pool_size;
    let dut = SyntheticDut::generate(dut_cfg)?;
    let pool = dut.reference_pool();

    let files = [out.join(DUT_FILE), out.join(SCHEMA_FILE), out.join(POOL_FILE)];
    dut.save(&files[0])?;
    dut.schema().save(&files[1])?;
    write_pool(&files[2], dut.schema(), &pool)?;

    let mut manifest = RunManifest::new("gen", config, settings)?;
    manifest.seeds.insert("dut".into(), settings.seed);
    manifest.seeds.insert("pool".into(), dut.reference_seed());
    manifest.artifacts = files.iter().map(|f| artifact(&out, f)).collect::<Result<_>>()?;
    manifest.save(&out)?;
    Ok(Outcome::Complete)
}

/// DUT and encoded pool from a `gen` directory.
pub fn load_inputs(dir: &Path) -> Result<(SyntheticDut, Vec<TestVector>, Vec<PathBuf>)> {
    let paths = vec![dir.join(DUT_FILE), dir.join(SCHEMA_FILE), dir.join(POOL_FILE)];
    let dut = SyntheticDut::load(&paths[0])?;
    let schema = Schema::load(&paths[1])?;
    if &schema != dut.schema() {
        bail!(
            "{} does not match the schema of {}",
            paths[1].display(),
            paths[0].display()
        );
    }
    let raw = read_pool(&paths[2], &schema)?;
    let pool = schema.encode_all(&raw)?;
    Ok((dut, pool, paths))
}

fn scorer_config(name: &str, epochs: usize) -> Result<ScorerConfig> {
    let mut cfg = ScorerConfig::new(ScorerKind::from_str(name)?);
    cfg.train.epochs = epochs;
    Ok(cfg)
}

pub fn loop_config(s: &RunSettings) -> Result<LoopConfig> {
    let policy = if s.scorer == "random" {
        SelectionPolicy::Random
    } else {
        SelectionPolicy::Novelty(scorer_config(&s.scorer, s.epochs)?)
    };
    let cfg = LoopConfig {
        initial_count: s.initial,
        batch_size: s.batch,
        target_coverage: s.target,
        max_rounds: s.max_rounds.unwrap_or(usize::MAX),
        policy,
        seeds: LoopSeeds {
            sampling: s.seed_sampling.unwrap_or(s.seed_model),
            model: s.seed_model,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(
    settings: &RunSettings,
    resume: bool,
    force: bool,
    halt_after_round: Option<usize>,
    config: Option<&Path>,
) -> Result<Outcome> {
    let out = output_dir(settings.out.as_deref(), "run");
    let cfg = loop_config(settings)?;
    let (dut, pool, inputs) = load_inputs(&settings.input)?;
    let checkpoint = out.join(CHECKPOINT_FILE);

    let state = if resume {
        let state = LoopState::load(&checkpoint)?;
        if state.config != cfg {
            bail!("{} was written with different run settings", checkpoint.display());
        }
        Some(state)
    } else {
        if checkpoint.exists() && !force {
            bail!(
                "{} exists (use --resume to continue or --force to start over)",
                checkpoint.display()
            );
        }
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        None
    };

    let trainer = trainer_for(&cfg, dut.num_events());
    let trainer_ref = trainer.as_ref().map(|t| t as &dyn ScorerTrainer);
    let mut lp = match state {
        Some(s) => SelectionLoop::resume(&pool, &dut, s, trainer_ref)?,
        None => SelectionLoop::new(&pool, &dut, cfg.clone(), trainer_ref)?,
    };
    let mut halted = false;
    lp.run_with(|state| {
        state.save(&checkpoint)?;
        let round = state.rounds.len() - 1;
        halted = !state.is_finished() && halt_after_round == Some(round);
        Ok(!halted)
    })?;
    if halted {
        return Ok(Outcome::Halted);
    }

    let state = lp.into_state();
    let mut files = state.write_outputs(&out)?;
    files.push(checkpoint);
    let mut manifest = RunManifest::new("run", config, settings)?;
    manifest.seeds.insert("sampling".into(), cfg.seeds.sampling);
    manifest.seeds.insert("model".into(), cfg.seeds.model);
    manifest.inputs = inputs
        .iter()
        .map(|f| artifact(&settings.input, f))
        .collect::<Result<_>>()?;
    manifest.artifacts = files.iter().map(|f| artifact(&out, f)).collect::<Result<_>>()?;
    // the checkpoint embeds wall times
    manifest.artifacts.last_mut().expect("checkpoint listed").deterministic = false;
    manifest.save(&out)?;
    Ok(Outcome::Complete)
}

pub fn experiment_config(s: &ExperimentSettings) -> Result<ExperimentConfig> {
    let names: Vec<&str> = if s.scorers.iter().any(|n| n == "all") {
        ScorerKind::ALL.iter().map(|k| k.as_str()).collect()
    } else {
        s.scorers.iter().map(String::as_str).collect()
    };
    let scorers = names
        .into_iter()
        .map(|n| scorer_config(n, s.epochs))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = ExperimentConfig::new(scorers, s.seed);
    cfg.repetitions = s.reps;
    cfg.baseline_repetitions = s.baseline_reps;
    cfg.baseline_rank = s.baseline_rank;
    cfg.targets = s.targets.clone();
    cfg.initial_count = s.initial;
    cfg.batch_size = s.batch;
    cfg.max_rounds = s.max_rounds.unwrap_or(usize::MAX);
    cfg.validate()?;
    Ok(cfg)
}

pub fn experiment(settings: &ExperimentSettings, config: Option<&Path>) -> Result<Outcome> {
    let out = output_dir(settings.out.as_deref(), "experiment");
    let cfg = experiment_config(settings)?;
    let (dut, pool, inputs) = load_inputs(&settings.input)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let outcome = run_experiment(&pool, &dut, &cfg)?;
    let files = write_outputs(&outcome, &out)?;

    let mut manifest = RunManifest::new("experiment", config, settings)?;
    manifest.seeds.insert("experiment".into(), cfg.seed);
    for rep in 0..cfg.repetitions {
        let seeds = cfg.seeds_for(rep);
        manifest.seeds.insert(format!("rep{rep:02}.sampling"), seeds.sampling);
        manifest.seeds.insert(format!("rep{rep:02}.model"), seeds.model);
    }
    manifest.inputs = inputs
        .iter()
        .map(|f| artifact(&settings.input, f))
        .collect::<Result<_>>()?;
    manifest.artifacts = files.iter().map(|f| artifact(&out, f)).collect::<Result<_>>()?;
    manifest.save(&out)?;
    Ok(Outcome::Complete)
}
