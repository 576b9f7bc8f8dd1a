//! Repeated-run comparison against random ordering.
//!
//! Each scorer is run `repetitions` times; repetition `i` of every scorer
//! starts from the same initial tests. A large population of random
//! orderings forms the baseline, and its k-th best run (k-th fewest tests to
//! reach a target) is the reference each scorer's savings are measured
//! against.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::CoverageRecord;
use crate::encoding::TestVector;
use crate::error::{Error, Result};
use crate::scorers::{ScorerConfig, ScorerKind};
use crate::seed::derive_seed;
use crate::selection::{
    random_baseline_walks, run_loop, CoverageOracle, LoopConfig, LoopSeeds, RoundLog, SelectionPolicy,
};

/// `1 - nnnts / baseline`; negative when the scorer needed more tests.
pub fn compute_savings(nnnts_tests: usize, baseline_tests: usize) -> Result<f64> {
    if baseline_tests == 0 {
        return Err(Error::InvalidConfig("baseline test count must be >= 1".into()));
    }
    Ok(1.0 - nnnts_tests as f64 / baseline_tests as f64)
}

/// The k-th smallest count (k-th best run), 1-based.
pub fn baseline_percentile(counts: &[usize], k: usize) -> Result<usize> {
    if k == 0 || k > counts.len() {
        return Err(Error::InvalidConfig(format!(
            "rank {k} is outside 1..={}",
            counts.len()
        )));
    }
    let mut v = counts.to_vec();
    let (_, kth, _) = v.select_nth_unstable(k - 1);
    Ok(*kth)
}

/// Population standard deviation over mean; 0 when all values agree.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        0.0
    } else {
        std / mean.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scorers: Vec<ScorerConfig>,
    pub repetitions: usize,
    pub baseline_repetitions: usize,
    /// Rank of the baseline run used as reference; `None` takes the 1%
    /// quantile (5th of 500, 50th of 5000).
    pub baseline_rank: Option<usize>,
    pub targets: Vec<f64>,
    pub initial_count: usize,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(scorers: Vec<ScorerConfig>, seed: u64) -> Self {
        ExperimentConfig {
            scorers,
            repetitions: 10,
            baseline_repetitions: 500,
            baseline_rank: None,
            targets: vec![0.95, 0.99, 0.995],
            initial_count: 100,
            batch_size: 1000,
            max_rounds: usize::MAX,
            seed,
        }
    }

    pub fn rank(&self) -> usize {
        self.baseline_rank
            .unwrap_or_else(|| ((self.baseline_repetitions as f64 / 100.0).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(Error::InvalidConfig(
                "an experiment needs at least 2 repetitions".into(),
            ));
        }
        if self.scorers.is_empty() || self.targets.is_empty() {
            return Err(Error::InvalidConfig("an experiment needs scorers and targets".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::InvalidConfig(format!("target {t} must be in (0, 1]")));
        }
        if self.baseline_repetitions == 0 || self.rank() > self.baseline_repetitions {
            return Err(Error::InvalidConfig(
                "baseline rank exceeds baseline repetitions".into(),
            ));
        }
        Ok(())
    }

    pub fn seeds_for(&self, repetition: usize) -> LoopSeeds {
        LoopSeeds {
            sampling: derive_seed(self.seed, "sampling", repetition as u64),
            model: derive_seed(self.seed, "model", repetition as u64),
        }
    }

    pub fn loop_config(&self, scorer: &ScorerConfig, repetition: usize) -> LoopConfig {
        LoopConfig {
            initial_count: self.initial_count,
            batch_size: self.batch_size,
            target_coverage: self.targets.iter().copied().fold(0.0, f64::max),
            max_rounds: self.max_rounds,
            policy: SelectionPolicy::Novelty(scorer.clone()),
            seeds: self.seeds_for(repetition),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scorer: ScorerKind,
    pub repetition: usize,
    pub initial_ids: Vec<u64>,
    /// Per target; `pool_size + 1` when the target was never reached.
    pub tests_to_target: Vec<usize>,
    pub rounds: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scorer: ScorerKind,
    pub target: f64,
    pub tests_to_target: Vec<usize>,
    pub baseline_rank: usize,
    pub baseline_tests: usize,
    pub baseline_median: usize,
    pub savings: Vec<f64>,
    pub most: f64,
    pub least: f64,
    pub average: f64,
    /// Coefficient of variation of the per-repetition savings.
    pub cv: f64,
    /// Coefficient of variation of the raw per-repetition test counts.
    pub cv_tests: f64,
}

impl ExperimentReport {
    fn build(
        scorer: ScorerKind,
        target: f64,
        tests_to_target: Vec<usize>,
        baseline_counts: &[usize],
        rank: usize,
    ) -> Result<Self> {
        let baseline_tests = baseline_percentile(baseline_counts, rank)?;
        let baseline_median = baseline_percentile(baseline_counts, baseline_counts.len().div_ceil(2))?;
        let savings = tests_to_target
            .iter()
            .map(|&n| compute_savings(n, baseline_tests))
            .collect::<Result<Vec<_>>>()?;
        let most = savings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let least = savings.iter().copied().fold(f64::INFINITY, f64::min);
        let average = savings.iter().sum::<f64>() / savings.len() as f64;
        Ok(ExperimentReport {
            scorer,
            target,
            cv: coefficient_of_variation(&savings),
            cv_tests: coefficient_of_variation(&tests_to_target.iter().map(|&n| n as f64).collect::<Vec<_>>()),
            tests_to_target,
            baseline_rank: rank,
            baseline_tests,
            baseline_median,
            savings,
            most,
            least,
            average,
        })
    }

    /// Repetitions that needed fewer tests than the median random run.
    pub fn beats_median(&self) -> usize {
        self.tests_to_target
            .iter()
            .filter(|&&n| n < self.baseline_median)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    /// `counts[t][rep]`: tests needed to reach target `t`.
    pub counts: Vec<Vec<usize>>,
    /// Positions (number of tests simulated) the median curve is sampled at.
    pub curve_positions: Vec<usize>,
    /// Median covered-event count at each position.
    pub median_curve: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub pool_size: usize,
    pub num_events: usize,
    pub runs: Vec<RunRecord>,
    pub baseline: BaselineSummary,
    pub reports: Vec<ExperimentReport>,
}

impl ExperimentOutcome {
    pub fn report(&self, scorer: ScorerKind, target: f64) -> Option<&ExperimentReport> {
        self.reports.iter().find(|r| r.scorer == scorer && r.target == target)
    }
}

fn median(values: &mut [usize]) -> usize {
    let mid = values.len().div_ceil(2) - 1;
    *values.select_nth_unstable(mid).1
}

/// Baseline positions: the selection-round grid plus 25% and 100% of the pool.
fn curve_positions(cfg: &ExperimentConfig, pool_size: usize) -> Vec<usize> {
    let mut p: Vec<usize> = std::iter::successors(Some(cfg.initial_count.min(pool_size)), |&n| {
        (n < pool_size).then(|| (n + cfg.batch_size).min(pool_size))
    })
    .collect();
    p.push((pool_size / 4).max(1));
    p.push(pool_size);
    p.sort_unstable();
    p.dedup();
    p
}

pub fn run_experiment(
    pool: &[TestVector],
    oracle: &dyn CoverageOracle,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("test pool"));
    }
    let pool_hits: Vec<CoverageRecord> = pool.par_iter().map(|v| oracle.simulate(v)).collect::<Result<_>>()?;

    let positions = curve_positions(cfg, pool.len());
    let walks = random_baseline_walks(
        &pool_hits,
        &cfg.targets,
        cfg.baseline_repetitions,
        derive_seed(cfg.seed, "baseline", 0),
        &positions,
    )?;
    let counts: Vec<Vec<usize>> = (0..cfg.targets.len())
        .map(|t| walks.iter().map(|w| w.tests_to_target[t]).collect())
        .collect();
    let median_curve = (0..positions.len())
        .map(|p| median(&mut walks.iter().map(|w| w.curve[p]).collect::<Vec<_>>()))
        .collect();
    let baseline = BaselineSummary {
        counts,
        curve_positions: positions,
        median_curve,
    };

    let jobs: Vec<(usize, &ScorerConfig)> = (0..cfg.repetitions)
        .flat_map(|rep| cfg.scorers.iter().map(move |s| (rep, s)))
        .collect();
    let never = pool.len() + 1;
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(rep, scorer)| {
            let state = run_loop(pool, oracle, cfg.loop_config(scorer, rep))?;
            Ok(RunRecord {
                scorer: scorer.kind,
                repetition: rep,
                initial_ids: state.initial_ids(),
                tests_to_target: cfg
                    .targets
                    .iter()
                    .map(|&t| state.tests_to_target(t).unwrap_or(never))
                    .collect(),
                rounds: state.rounds,
            })
        })
        .collect::<Result<_>>()?;

    for rep in 0..cfg.repetitions {
        let mut of_rep = runs.iter().filter(|r| r.repetition == rep);
        let first = of_rep.next().expect("every repetition has runs");
        if let Some(other) = of_rep.find(|r| r.initial_ids != first.initial_ids) {
            return Err(Error::Logic(format!(
                "repetition {rep}: {} and {} started from different initial tests",
                first.scorer, other.scorer
            )));
        }
    }

    let mut reports = Vec::new();
    for scorer in &cfg.scorers {
        for (t, &target) in cfg.targets.iter().enumerate() {
            let tests: Vec<usize> = runs
                .iter()
                .filter(|r| r.scorer == scorer.kind)
                .map(|r| r.tests_to_target[t])
                .collect();
            reports.push(ExperimentReport::build(
                scorer.kind,
                target,
                tests,
                &baseline.counts[t],
                cfg.rank(),
            )?);
        }
    }

    Ok(ExperimentOutcome {
        config: cfg.clone(),
        pool_size: pool.len(),
        num_events: oracle.num_events(),
        runs,
        baseline,
        reports,
    })
}

fn write_file(path: &Path, body: &str) -> Result<PathBuf> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes the deterministic report files plus `timings.csv`; returns their paths.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();

    let mut table = String::from("scorer,target,most,least,average,cv\n");
    for r in &outcome.reports {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            r.scorer, r.target, r.most, r.least, r.average, r.cv
        )
        .unwrap();
    }
    files.push(write_file(&dir.join("tableI.csv"), &table)?);

    let mut reps = String::from("scorer,target,repetition,tests_to_target,baseline_tests,saving\n");
    for r in &outcome.reports {
        for (i, (n, s)) in r.tests_to_target.iter().zip(&r.savings).enumerate() {
            writeln!(reps, "{},{},{i},{n},{},{s}", r.scorer, r.target, r.baseline_tests).unwrap();
        }
    }
    files.push(write_file(&dir.join("repetitions.csv"), &reps)?);

    let mut base = String::from("target,rank,baseline_tests,median_tests\n");
    let mut hist = String::from("target,tests_to_target,frequency\n");
    for (t, &target) in outcome.config.targets.iter().enumerate() {
        let counts = &outcome.baseline.counts[t];
        let rank = outcome.config.rank();
        writeln!(
            base,
            "{target},{rank},{},{}",
            baseline_percentile(counts, rank)?,
            median(&mut counts.clone())
        )
        .unwrap();
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        for chunk in sorted.chunk_by(|a, b| a == b) {
            writeln!(hist, "{target},{},{}", chunk[0], chunk.len()).unwrap();
        }
    }
    files.push(write_file(&dir.join("baseline.csv"), &base)?);
    files.push(write_file(&dir.join("baseline_hist.csv"), &hist)?);

    let ev = outcome.num_events as f64;
    let mut curves = String::from("series,repetition,round,tests_simulated,coverage\n");
    for run in &outcome.runs {
        for r in &run.rounds {
            writeln!(
                curves,
                "{},{},{},{},{}",
                run.scorer, run.repetition, r.round, r.simulated, r.cumulative_coverage
            )
            .unwrap();
        }
    }
    for (i, (&pos, &covered)) in outcome
        .baseline
        .curve_positions
        .iter()
        .zip(&outcome.baseline.median_curve)
        .enumerate()
    {
        writeln!(curves, "random-median,,{i},{pos},{}", covered as f64 / ev).unwrap();
    }
    files.push(write_file(&dir.join("curves.csv"), &curves)?);

    let mut timings = String::from("scorer,repetition,round,wall_ms\n");
    for run in &outcome.runs {
        for r in &run.rounds {
            writeln!(
                timings,
                "{},{},{},{:.3}",
                run.scorer,
                run.repetition,
                r.round,
                r.wall_time.as_secs_f64() * 1e3
            )
            .unwrap();
        }
    }
    files.push(write_file(&dir.join("timings.csv"), &timings)?);
    Ok(files)
}
