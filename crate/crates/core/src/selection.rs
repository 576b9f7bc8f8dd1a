//! The selection loop.
//!
//! Round 0 simulates a seeded random sample of the pool. Every later round
//! refits the standardizer on the simulated set, retrains a scorer from
//! scratch on all simulated tests, scores the rest of the pool and simulates
//! the highest-scoring batch. The loop stops at the coverage target, when the
//! pool runs out, or after `max_rounds` selection rounds.
//!
//! All randomness is derived from the configured seeds and the round index,
//! so a checkpoint only needs the simulated tests and the logs to resume.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::coverage::{required_events, CoverageRecord, CumulativeCoverage};
use crate::encoding::{Standardizer, TestVector, CONSTANT_TOLERANCE};
use crate::error::{Error, Result};
use crate::scorers::{NoveltyScore, NoveltyScorer, ScorerConfig, ScorerKind};
use crate::seed::{derive_seed, rng_from};
use crate::sim::SyntheticDut;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Anything that maps an encoded test to the events it hits.
pub trait CoverageOracle: Sync {
    fn num_events(&self) -> usize;
    fn simulate(&self, test: &TestVector) -> Result<CoverageRecord>;
}

impl CoverageOracle for SyntheticDut {
    fn num_events(&self) -> usize {
        SyntheticDut::num_events(self)
    }

    fn simulate(&self, test: &TestVector) -> Result<CoverageRecord> {
        self.simulate_vector(test)
    }
}

/// Trains a scorer on one round's simulated data.
pub trait ScorerTrainer: Sync {
    /// `simulated` is already standardized; `coverage[i]` belongs to `simulated[i]`.
    fn train(&self, simulated: &[TestVector], coverage: &[CoverageRecord], seed: u64)
        -> Result<Box<dyn NoveltyScorer>>;
}

/// A scorer configuration bound to the coverage events sampled for one run.
pub struct NoveltyTrainer {
    pub config: ScorerConfig,
    pub sampled_events: Vec<usize>,
}

impl ScorerTrainer for NoveltyTrainer {
    fn train(
        &self,
        simulated: &[TestVector],
        coverage: &[CoverageRecord],
        seed: u64,
    ) -> Result<Box<dyn NoveltyScorer>> {
        self.config.train(simulated, coverage, &self.sampled_events, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Walk a seeded permutation of the pool.
    Random,
    Novelty(ScorerConfig),
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::Random => "random",
            SelectionPolicy::Novelty(c) => c.kind.as_str(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSeeds {
    /// Initial sample, sampled density events, random ordering.
    pub sampling: u64,
    /// Model initialization and training order.
    pub model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub initial_count: usize,
    pub batch_size: usize,
    pub target_coverage: f64,
    pub max_rounds: usize,
    pub policy: SelectionPolicy,
    pub seeds: LoopSeeds,
}

impl LoopConfig {
    pub fn new(policy: SelectionPolicy, seeds: LoopSeeds) -> Self {
        LoopConfig {
            initial_count: 100,
            batch_size: 1000,
            target_coverage: 0.99,
            max_rounds: usize::MAX,
            policy,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_count == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("initial_count and batch_size must be >= 1".into()));
        }
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target coverage {} must be in (0, 1]",
                self.target_coverage
            )));
        }
        Ok(())
    }

    /// Coverage events sampled as density outputs for this run.
    pub fn sampled_events(&self, num_events: usize) -> Vec<usize> {
        let wanted = match &self.policy {
            SelectionPolicy::Novelty(c) if c.kind == ScorerKind::Density => c.density_events.min(num_events),
            _ => return Vec::new(),
        };
        let mut rng = rng_from(derive_seed(self.seeds.sampling, "density-events", 0));
        let mut events = index::sample(&mut rng, num_events, wanted).into_vec();
        events.sort_unstable();
        events
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub selected_ids: Vec<u64>,
    pub simulated: usize,
    pub covered_events: usize,
    pub cumulative_coverage: f64,
    /// `None` for round 0 and for random selection.
    pub training_loss: Option<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedTest {
    pub round: usize,
    pub test_id: u64,
    pub score: Option<NoveltyScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    PoolExhausted,
    MaxRounds,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub version: u32,
    pub config: LoopConfig,
    pub pool_size: usize,
    pub num_events: usize,
    /// Simulated tests in simulation order.
    pub selected: Vec<SelectedTest>,
    /// Hit events of each simulated test, same order as `selected`.
    pub coverage: Vec<Vec<usize>>,
    /// Covered-event count after each simulated test.
    pub trace: Vec<usize>,
    pub rounds: Vec<RoundLog>,
    pub stopped: Option<StopReason>,
}

impl LoopState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&s)?;
        let found = v.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn coverage_records(&self) -> Vec<CoverageRecord> {
        self.selected
            .iter()
            .zip(&self.coverage)
            .map(|(s, hits)| CoverageRecord::from_events(s.test_id, self.num_events, hits.iter().copied()))
            .collect()
    }

    pub fn initial_ids(&self) -> Vec<u64> {
        self.selected
            .iter()
            .filter(|s| s.round == 0)
            .map(|s| s.test_id)
            .collect()
    }

    /// Number of simulated tests at which `target` was first reached.
    pub fn tests_to_target(&self, target: f64) -> Option<usize> {
        tests_to_target(&self.trace, required_events(target, self.num_events))
    }

    pub fn is_finished(&self) -> bool {
        self.stopped.is_some()
    }

    /// Writes `rounds.csv`, `selected.csv`, `coverage.csv` and `timings.csv`.
    ///
    /// Only `timings.csv` depends on the machine; the rest are reproducible
    /// from the seeds.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        use std::fmt::Write as _;

        let mut rounds = String::from("round,simulated,selected,covered_events,coverage,training_loss\n");
        let mut timings = String::from("round,wall_ms\n");
        for r in &self.rounds {
            let loss = r.training_loss.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                rounds,
                "{},{},{},{},{},{loss}",
                r.round,
                r.simulated,
                r.selected_ids.len(),
                r.covered_events,
                r.cumulative_coverage
            )
            .unwrap();
            writeln!(timings, "{},{:.3}", r.round, r.wall_time.as_secs_f64() * 1e3).unwrap();
        }
        let mut selected = String::from("round,test_id,score\n");
        for s in &self.selected {
            let score = s.score.map(|v| v.to_string()).unwrap_or_default();
            writeln!(selected, "{},{},{score}", s.round, s.test_id).unwrap();
        }
        let mut coverage = String::from("test_id,event_id\n");
        for (s, hits) in self.selected.iter().zip(&self.coverage) {
            for e in hits {
                writeln!(coverage, "{},{e}", s.test_id).unwrap();
            }
        }
        let mut files = Vec::new();
        for (name, body) in [
            ("rounds.csv", rounds),
            ("selected.csv", selected),
            ("coverage.csv", coverage),
            ("timings.csv", timings),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
        Ok(files)
    }
}

/// 1-based position at which the covered count first reaches `required`.
pub fn tests_to_target(trace: &[usize], required: usize) -> Option<usize> {
    trace.iter().position(|&c| c >= required).map(|i| i + 1)
}

/// Orders candidates by descending score, ties by ascending test id.
pub fn rank_by_score(ids: &[u64], scores: &[NoveltyScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// Pool index of a chosen test and its score, if it was scored.
type Pick = (usize, Option<NoveltyScore>);

pub struct SelectionLoop<'a> {
    pool: &'a [TestVector],
    oracle: &'a dyn CoverageOracle,
    trainer: Option<&'a dyn ScorerTrainer>,
    index_of: HashMap<u64, usize>,
    simulated: Vec<bool>,
    cumulative: CumulativeCoverage,
    records: Vec<CoverageRecord>,
    random_order: Vec<usize>,
    state: LoopState,
}

impl<'a> SelectionLoop<'a> {
    /// `pool` holds encoded, unstandardized vectors. `trainer` is required
    /// unless the policy is random.
    pub fn new(
        pool: &'a [TestVector],
        oracle: &'a dyn CoverageOracle,
        cfg: LoopConfig,
        trainer: Option<&'a dyn ScorerTrainer>,
    ) -> Result<Self> {
        let state = LoopState {
            version: CHECKPOINT_VERSION,
            config: cfg,
            pool_size: pool.len(),
            num_events: oracle.num_events(),
            selected: Vec::new(),
            coverage: Vec::new(),
            trace: Vec::new(),
            rounds: Vec::new(),
            stopped: None,
        };
        Self::resume(pool, oracle, state, trainer)
    }

    /// Continues from a saved state; the pool and oracle must be the ones
    /// the state was produced with.
    pub fn resume(
        pool: &'a [TestVector],
        oracle: &'a dyn CoverageOracle,
        state: LoopState,
        trainer: Option<&'a dyn ScorerTrainer>,
    ) -> Result<Self> {
        state.config.validate()?;
        if pool.is_empty() {
            return Err(Error::Empty("test pool"));
        }
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: state.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if state.pool_size != pool.len() || state.num_events != oracle.num_events() {
            return Err(Error::InvalidConfig(
                "checkpoint belongs to a different pool or DUT".into(),
            ));
        }
        if matches!(state.config.policy, SelectionPolicy::Novelty(_)) && trainer.is_none() {
            return Err(Error::InvalidConfig("novelty selection needs a scorer trainer".into()));
        }
        let mut index_of = HashMap::with_capacity(pool.len());
        for (i, v) in pool.iter().enumerate() {
            if index_of.insert(v.test_id, i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate test id {} in pool", v.test_id)));
            }
        }

        let mut simulated = vec![false; pool.len()];
        let mut cumulative = CumulativeCoverage::new(state.num_events);
        let records = state.coverage_records();
        for (s, r) in state.selected.iter().zip(&records) {
            let i = *index_of
                .get(&s.test_id)
                .ok_or_else(|| Error::Integrity(format!("checkpointed test {} is not in the pool", s.test_id)))?;
            if std::mem::replace(&mut simulated[i], true) {
                return Err(Error::Integrity(format!("test {} was simulated twice", s.test_id)));
            }
            cumulative.add(r);
        }

        let mut random_order: Vec<usize> = (0..pool.len()).collect();
        random_order.shuffle(&mut rng_from(derive_seed(
            state.config.seeds.sampling,
            "random-order",
            0,
        )));

        Ok(SelectionLoop {
            pool,
            oracle,
            trainer,
            index_of,
            simulated,
            cumulative,
            records,
            random_order,
            state,
        })
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn into_state(self) -> LoopState {
        self.state
    }

    fn remaining(&self) -> usize {
        self.pool.len() - self.state.selected.len()
    }

    fn check_stop(&mut self) {
        let cfg = &self.state.config;
        let required = required_events(cfg.target_coverage, self.state.num_events);
        self.state.stopped = if self.cumulative.covered() >= required {
            Some(StopReason::TargetReached)
        } else if self.remaining() == 0 {
            Some(StopReason::PoolExhausted)
        } else if self.state.rounds.len() > cfg.max_rounds {
            Some(StopReason::MaxRounds)
        } else {
            None
        };
    }

    fn simulate_batch(&mut self, round: usize, picks: Vec<Pick>) -> Result<()> {
        for (i, score) in picks {
            if std::mem::replace(&mut self.simulated[i], true) {
                return Err(Error::Logic(format!("test {} selected twice", self.pool[i].test_id)));
            }
            let record = self.oracle.simulate(&self.pool[i])?;
            if record.test_id != self.pool[i].test_id || record.num_events() != self.state.num_events {
                return Err(Error::Integrity(format!(
                    "oracle returned a foreign record for test {}",
                    self.pool[i].test_id
                )));
            }
            self.cumulative.add(&record);
            self.state.selected.push(SelectedTest {
                round,
                test_id: record.test_id,
                score,
            });
            self.state.coverage.push(record.hit_events().collect());
            self.state.trace.push(self.cumulative.covered());
            self.records.push(record);
        }
        Ok(())
    }

    /// Runs one round. Returns `false` once the loop has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.is_finished() {
            return Ok(false);
        }
        let start = Instant::now();
        let round = self.state.rounds.len();
        let before = self.state.selected.len();
        let cfg = self.state.config.clone();

        let mut training_loss = None;
        let picks: Vec<Pick> = if round == 0 {
            let n = cfg.initial_count.min(self.pool.len());
            let mut rng = rng_from(derive_seed(cfg.seeds.sampling, "initial", 0));
            index::sample(&mut rng, self.pool.len(), n)
                .into_iter()
                .map(|i| (i, None))
                .collect()
        } else {
            match &cfg.policy {
                SelectionPolicy::Random => self
                    .random_order
                    .iter()
                    .copied()
                    .filter(|&i| !self.simulated[i])
                    .take(cfg.batch_size)
                    .map(|i| (i, None))
                    .collect(),
                SelectionPolicy::Novelty(_) => {
                    let (picks, loss) = self.novelty_batch(round, cfg.batch_size, cfg.seeds.model)?;
                    training_loss = Some(loss);
                    picks
                }
            }
        };
        if picks.is_empty() && self.remaining() > 0 {
            return Err(Error::Logic(format!("round {round} selected no tests")));
        }
        self.simulate_batch(round, picks)?;

        let selected_ids = self.state.selected[before..].iter().map(|s| s.test_id).collect();
        self.state.rounds.push(RoundLog {
            round,
            selected_ids,
            simulated: self.state.selected.len(),
            covered_events: self.cumulative.covered(),
            cumulative_coverage: self.cumulative.fraction(),
            training_loss,
            wall_time: start.elapsed(),
        });
        self.check_stop();
        Ok(!self.state.is_finished())
    }

    fn novelty_batch(&self, round: usize, batch: usize, model_seed: u64) -> Result<(Vec<Pick>, f64)> {
        let trainer = self.trainer.expect("checked at construction");
        let sim_idx: Vec<usize> = self.state.selected.iter().map(|s| self.index_of[&s.test_id]).collect();
        let unsim_idx: Vec<usize> = (0..self.pool.len()).filter(|&i| !self.simulated[i]).collect();

        let raw_sim: Vec<&[f64]> = sim_idx.iter().map(|&i| self.pool[i].values.as_slice()).collect();
        let standardizer = Standardizer::fit(&raw_sim, CONSTANT_TOLERANCE)?;
        let standardize = |idx: &[usize]| -> Result<Vec<TestVector>> {
            idx.iter().map(|&i| standardizer.standardize(&self.pool[i])).collect()
        };
        let sim = standardize(&sim_idx)?;
        let unsim = standardize(&unsim_idx)?;

        let scorer = trainer.train(&sim, &self.records, derive_seed(model_seed, "round", round as u64))?;
        let scores = scorer.score_all(&unsim)?;
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Logic(format!("scorer produced invalid score {bad}")));
        }
        let ids: Vec<u64> = unsim.iter().map(|v| v.test_id).collect();
        let picks = rank_by_score(&ids, &scores)
            .into_iter()
            .take(batch)
            .map(|j| (unsim_idx[j], Some(scores[j])))
            .collect();
        Ok((picks, scorer.training_loss()))
    }

    /// Runs to completion, calling `after_round` after every round. Returning
    /// `false` from the callback pauses the loop; the state can be resumed.
    pub fn run_with(&mut self, mut after_round: impl FnMut(&LoopState) -> Result<bool>) -> Result<()> {
        while self.step()? {
            if !after_round(&self.state)? {
                return Ok(());
            }
        }
        after_round(&self.state)?;
        Ok(())
    }
}

/// Builds the trainer a loop config needs, if any.
pub fn trainer_for(cfg: &LoopConfig, num_events: usize) -> Option<NoveltyTrainer> {
    match &cfg.policy {
        SelectionPolicy::Random => None,
        SelectionPolicy::Novelty(c) => Some(NoveltyTrainer {
            config: c.clone(),
            sampled_events: cfg.sampled_events(num_events),
        }),
    }
}

/// Runs the loop to completion and returns its state.
pub fn run_loop(pool: &[TestVector], oracle: &dyn CoverageOracle, cfg: LoopConfig) -> Result<LoopState> {
    let trainer = trainer_for(&cfg, oracle.num_events());
    let mut lp = SelectionLoop::new(pool, oracle, cfg, trainer.as_ref().map(|t| t as &dyn ScorerTrainer))?;
    while lp.step()? {}
    Ok(lp.into_state())
}

/// Random-ordering baseline.
///
/// `pool_hits[i]` are the events hit by pool test `i`. Each repetition walks a
/// fresh seeded permutation and records, per target, the number of tests at
/// which it was first reached (`pool.len() + 1` if never).
pub fn run_random_baseline(
    pool_hits: &[CoverageRecord],
    targets: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    Ok(random_baseline_walks(pool_hits, targets, repetitions, seed, &[])?
        .into_iter()
        .map(|w| w.tests_to_target)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWalk {
    pub tests_to_target: Vec<usize>,
    /// Covered-event count after each requested checkpoint position.
    pub curve: Vec<usize>,
}

/// Like [`run_random_baseline`] but also samples each walk's coverage at
/// the given (1-based, ascending) positions.
pub fn random_baseline_walks(
    pool_hits: &[CoverageRecord],
    targets: &[f64],
    repetitions: usize,
    seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<BaselineWalk>> {
    use rayon::prelude::*;

    if repetitions == 0 {
        return Err(Error::InvalidConfig("baseline repetitions must be >= 1".into()));
    }
    let first = pool_hits.first().ok_or(Error::Empty("baseline pool"))?;
    let num_events = first.num_events();
    let required: Vec<usize> = targets.iter().map(|&t| required_events(t, num_events)).collect();
    let never = pool_hits.len() + 1;
    let walks = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut order: Vec<usize> = (0..pool_hits.len()).collect();
            order.shuffle(&mut rng_from(derive_seed(seed, "baseline", rep as u64)));
            let mut cov = CumulativeCoverage::new(num_events);
            let mut hit_at = vec![never; targets.len()];
            let mut curve = Vec::with_capacity(checkpoints.len());
            let mut next_cp = 0;
            let last_needed = checkpoints.last().copied().unwrap_or(0);
            for (pos, &i) in order.iter().enumerate() {
                cov.add(&pool_hits[i]);
                let n = pos + 1;
                for (h, &r) in hit_at.iter_mut().zip(&required) {
                    if *h == never && cov.covered() >= r {
                        *h = n;
                    }
                }
                while next_cp < checkpoints.len() && checkpoints[next_cp] == n {
                    curve.push(cov.covered());
                    next_cp += 1;
                }
                if hit_at.iter().all(|&h| h != never) && n >= last_needed {
                    break;
                }
            }
            while curve.len() < checkpoints.len() {
                curve.push(cov.covered());
            }
            BaselineWalk {
                tests_to_target: hit_at,
                curve,
            }
        })
        .collect();
    Ok(walks)
}
