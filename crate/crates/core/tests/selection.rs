use std::collections::HashSet;

use covsel_core::encoding::TestVector;
use covsel_core::experiment::{run_experiment, write_outputs, ExperimentConfig};
use covsel_core::scorers::{ScorerConfig, ScorerKind};
use covsel_core::selection::{
    run_loop, trainer_for, LoopConfig, LoopSeeds, LoopState, ScorerTrainer, SelectionLoop, SelectionPolicy, StopReason,
};
use covsel_core::sim::{DutConfig, SyntheticDut, TierMix};

fn small() -> (SyntheticDut, Vec<TestVector>) {
    let mut cfg = DutConfig::new(7, 12, 90, TierMix::DESK);
    cfg.reference_pool_size = 2000;
    let dut = SyntheticDut::generate(cfg).unwrap();
    let pool = dut.schema().encode_all(&dut.reference_pool()).unwrap();
    (dut, pool)
}

fn cfg(policy: SelectionPolicy, target: f64) -> LoopConfig {
    LoopConfig {
        initial_count: 100,
        batch_size: 200,
        target_coverage: target,
        max_rounds: usize::MAX,
        policy,
        seeds: LoopSeeds { sampling: 1, model: 2 },
    }
}

fn policies() -> Vec<SelectionPolicy> {
    let mut v = vec![SelectionPolicy::Random];
    v.extend(
        ScorerKind::ALL
            .into_iter()
            .map(|k| SelectionPolicy::Novelty(ScorerConfig::new(k))),
    );
    v
}

#[test]
fn every_policy_partitions_the_pool_and_grows_coverage() {
    let (dut, pool) = small();
    for p in policies() {
        let state = run_loop(&pool, &dut, cfg(p, 1.0)).unwrap();
        let ids: HashSet<u64> = state.selected.iter().map(|s| s.test_id).collect();
        assert_eq!(ids.len(), state.selected.len());
        assert!(state.trace.windows(2).all(|w| w[0] <= w[1]));
        for (i, r) in state.rounds.iter().enumerate() {
            assert_eq!(r.simulated, (100 + 200 * i).min(pool.len()));
        }
        let last = state.rounds.last().unwrap();
        assert!(matches!(
            state.stopped,
            Some(StopReason::TargetReached) | Some(StopReason::PoolExhausted)
        ));
        if last.covered_events < dut.num_events() {
            assert_eq!(state.selected.len(), pool.len());
        }
    }
}

#[test]
fn loop_ends_after_round_zero_when_the_target_is_already_met() {
    let (dut, pool) = small();
    let state = run_loop(&pool, &dut, cfg(SelectionPolicy::Random, 0.1)).unwrap();
    assert_eq!(state.rounds.len(), 1);
    assert_eq!(state.stopped, Some(StopReason::TargetReached));
}

#[test]
fn resuming_from_disk_reproduces_the_uninterrupted_run() {
    let (dut, pool) = small();
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in policies().into_iter().enumerate() {
        let c = cfg(p, 0.99);
        let full = run_loop(&pool, &dut, c.clone()).unwrap();
        let trainer = trainer_for(&c, dut.num_events());
        let t = trainer.as_ref().map(|t| t as &dyn ScorerTrainer);
        let mut lp = SelectionLoop::new(&pool, &dut, c.clone(), t).unwrap();
        lp.step().unwrap();
        lp.step().unwrap();
        let path = dir.path().join(format!("{i}.json"));
        lp.state().save(&path).unwrap();
        let mut resumed = SelectionLoop::resume(&pool, &dut, LoopState::load(&path).unwrap(), t).unwrap();
        while resumed.step().unwrap() {}
        let resumed = resumed.into_state();
        assert_eq!(full.selected, resumed.selected);
        assert_eq!(full.trace, resumed.trace);
        let (a, b) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        full.write_outputs(&a).unwrap();
        resumed.write_outputs(&b).unwrap();
        for f in ["rounds.csv", "selected.csv", "coverage.csv"] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
    }
}

#[test]
fn experiment_shares_initial_tests_and_writes_reports() {
    let (dut, pool) = small();
    let scorers = ScorerKind::ALL.iter().map(|&k| ScorerConfig::new(k)).collect();
    let mut c = ExperimentConfig::new(scorers, 3);
    c.repetitions = 3;
    c.baseline_repetitions = 40;
    c.batch_size = 200;
    c.targets = vec![0.9, 0.95];
    let outcome = run_experiment(&pool, &dut, &c).unwrap();
    for rep in 0..3 {
        let sets: Vec<_> = outcome
            .runs
            .iter()
            .filter(|r| r.repetition == rep)
            .map(|r| &r.initial_ids)
            .collect();
        assert_eq!(sets.len(), 3);
        assert!(sets.windows(2).all(|w| w[0] == w[1]));
    }
    for r in &outcome.reports {
        assert!(r.most >= r.average && r.average >= r.least);
        assert_eq!(r.baseline_rank, 1);
    }
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&outcome, dir.path()).unwrap();
    let table = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(table.lines().next(), Some("scorer,target,most,least,average,cv"));
    assert_eq!(table.lines().count(), 1 + 3 * 2);

    let again = run_experiment(&pool, &dut, &c).unwrap();
    assert_eq!(
        again.runs.iter().map(|r| &r.tests_to_target).collect::<Vec<_>>(),
        outcome.runs.iter().map(|r| &r.tests_to_target).collect::<Vec<_>>()
    );
}
