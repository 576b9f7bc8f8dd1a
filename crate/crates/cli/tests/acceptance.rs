//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use covsel_core::encoding::{Standardizer, TestVector, CONSTANT_TOLERANCE};
use covsel_core::experiment::{run_experiment, ExperimentConfig};
use covsel_core::nn::{layers_from_widths, Activation, LayerSpec, Loss, MlpModel};
use covsel_core::scorers::{
    autoencoder_score, coverage_novelty_label, DensityScorer, NoveltyScorer, ScorerConfig, ScorerKind,
};
use covsel_core::selection::{
    run_loop, trainer_for, LoopConfig, LoopSeeds, LoopState, ScorerTrainer, SelectionLoop, SelectionPolicy,
};
use covsel_core::sim::{DutConfig, SyntheticDut, TierMix};
use covsel_core::{CoverageRecord, HitCounts};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_TIME_LIMIT_S: f64 = 1.0;
const AE_TOL: f64 = 1e-12;
const AE_PAIRS: usize = 1_000;
const KNN_TOL: f64 = 1e-12;
const KNN_MAX_VALUES: usize = 500;
const KNN_NEURONS: usize = 20;
const CN_PAIRS: usize = 10_000;
const STD_TOL: f64 = 1e-9;
const STD_MATRICES: usize = 100;

const DESK_FEATURES: usize = 64;
const DESK_EVENTS: usize = 800;
const DESK_POOL: usize = 20_000;
const DESK_INITIAL: usize = 100;
const DESK_BATCH: usize = 500;
const DESK_BASELINES: usize = 500;
const DESK_REPS: usize = 10;
const DESK_TARGET: f64 = 0.95;
const MIN_REPS_BELOW_MEDIAN: usize = 8;
const MIN_BEST_AVG_SAVING: f64 = 0.15;
const BASELINE_RANK: usize = 5;
const CONCAVITY_FRACTION: f64 = 0.5;

const DUT_SEED: u64 = 1;
const EXPERIMENT_SEED: u64 = 2026;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.gen_range(0..3) {
        0 => Activation::leaky_relu(),
        1 => Activation::Sigmoid,
        _ => Activation::Identity,
    }
}

fn random_model(rng: &mut ChaCha8Rng, max_width: usize, output: Option<Activation>) -> MlpModel {
    let depth = rng.gen_range(2..=4);
    let mut layers = vec![LayerSpec::input(rng.gen_range(1..=max_width))];
    for l in 1..depth {
        let act = match output {
            Some(a) if l == depth - 1 => a,
            _ => random_activation(rng),
        };
        layers.push(LayerSpec::new(rng.gen_range(1..=max_width), act));
    }
    let mut m = MlpModel::init(layers, rng.gen()).unwrap();
    // move biases off zero so every path is exercised
    for b in m.biases_mut() {
        b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    m
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi))
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut models = 0;
    for loss in [Loss::MeanSquaredError, Loss::BinaryCrossEntropy] {
        for _ in 0..40 {
            let out_act = match loss {
                Loss::BinaryCrossEntropy => Some(Activation::Sigmoid),
                Loss::MeanSquaredError => None,
            };
            let mut m = random_model(&mut rng, 10, out_act);
            let n = 6;
            let x = random_matrix(&mut rng, n, m.input_width(), -2.0, 2.0);
            let t = match loss {
                Loss::BinaryCrossEntropy => {
                    Array2::from_shape_fn((n, m.output_width()), |_| rng.gen_range(0..2) as f64)
                }
                Loss::MeanSquaredError => random_matrix(&mut rng, n, m.output_width(), -1.0, 1.0),
            };
            let (_, grads) = m.loss_and_gradients(x.view(), t.view(), loss).unwrap();
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for l in 0..m.weights().len() {
                let shape = m.weights()[l].dim();
                for i in 0..shape.0 {
                    for j in 0..shape.1 {
                        let w0 = m.weights()[l][[i, j]];
                        m.weights_mut()[l][[i, j]] = w0 + h;
                        let up = m.loss(x.view(), t.view(), loss).unwrap();
                        m.weights_mut()[l][[i, j]] = w0 - h;
                        let down = m.loss(x.view(), t.view(), loss).unwrap();
                        m.weights_mut()[l][[i, j]] = w0;
                        numeric.push((up - down) / (2.0 * h));
                        analytic.push(grads.weights[l][[i, j]]);
                    }
                }
                for j in 0..m.biases()[l].len() {
                    let b0 = m.biases()[l][j];
                    m.biases_mut()[l][j] = b0 + h;
                    let up = m.loss(x.view(), t.view(), loss).unwrap();
                    m.biases_mut()[l][j] = b0 - h;
                    let down = m.loss(x.view(), t.view(), loss).unwrap();
                    m.biases_mut()[l][j] = b0;
                    numeric.push((up - down) / (2.0 * h));
                    analytic.push(grads.biases[l][j]);
                }
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            let norm_n: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = diff / (norm_a + norm_n).max(1e-12);
            worst = worst.max(rel);
            models += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < GRADIENT_REL_TOL && secs < GRADIENT_TIME_LIMIT_S,
        format!("{models} models, worst relative error {worst:.2e} (< {GRADIENT_REL_TOL:e}), {secs:.3} s (< {GRADIENT_TIME_LIMIT_S} s)"),
    )
}

/// Scalar-loop forward pass written directly from the layer definitions.
fn naive_forward(m: &MlpModel, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    for (l, spec) in m.layers().iter().skip(1).enumerate() {
        let w = &m.weights()[l];
        let b = &m.biases()[l];
        let mut next = vec![0.0; spec.width];
        for (j, out) in next.iter_mut().enumerate() {
            let mut z = b[j];
            for (i, ai) in a.iter().enumerate() {
                z += ai * w[[i, j]];
            }
            *out = match spec.activation {
                Activation::LeakyRelu { slope } => {
                    if z > 0.0 {
                        z
                    } else {
                        slope * z
                    }
                }
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::Identity => z,
            };
        }
        a = next;
    }
    a
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..AE_PAIRS {
        let d = rng.gen_range(1..=12);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=12)).collect();
        let widths: Vec<usize> = std::iter::once(d).chain(hidden).chain(std::iter::once(d)).collect();
        let out = random_activation(&mut rng);
        let m = MlpModel::init(layers_from_widths(&widths, Activation::leaky_relu(), out), rng.gen()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let recon = naive_forward(&m, &x);
        let mut sum = 0.0;
        for i in 0..d {
            sum += (x[i] - recon[i]) * (x[i] - recon[i]);
        }
        let expected = sum / d as f64;
        worst = worst.max((autoencoder_score(&m, &x).unwrap() - expected).abs());
    }
    check(
        worst <= AE_TOL,
        format!("{AE_PAIRS} pairs, max |diff| {worst:.2e} (<= {AE_TOL:e})"),
    )
}

fn brute_force_knn(values: &[f64], x: f64, k: usize) -> f64 {
    let mut d: Vec<f64> = values.iter().map(|v| (x - v).abs()).collect();
    d.sort_by(f64::total_cmp);
    d.iter().take(k).sum()
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in [1, 5, 15] {
        for _ in 0..30 {
            let neurons = rng.gen_range(1..=KNN_NEURONS);
            let n = rng.gen_range(1..=KNN_MAX_VALUES);
            // a coarse grid makes exact ties common
            let raw: Vec<Vec<f64>> = (0..neurons)
                .map(|_| (0..n).map(|_| (rng.gen_range(-40..40) as f64) * 0.25).collect())
                .collect();
            let caches: Vec<Vec<f64>> = raw
                .iter()
                .map(|c| {
                    let mut s = c.clone();
                    s.sort_by(f64::total_cmp);
                    s
                })
                .collect();
            let model = MlpModel::init(vec![LayerSpec::input(1), LayerSpec::new(1, Activation::Sigmoid)], 0).unwrap();
            let scorer = DensityScorer {
                model,
                caches,
                k,
                sampled_events: vec![0],
                loss: 0.0,
            };
            for _ in 0..5 {
                let probe: Vec<f64> = (0..neurons)
                    .map(|_| {
                        if rng.gen_bool(0.3) {
                            (rng.gen_range(-40..40) as f64) * 0.25
                        } else {
                            rng.gen_range(-12.0..12.0)
                        }
                    })
                    .collect();
                let expected: f64 = raw.iter().zip(&probe).map(|(c, &x)| brute_force_knn(c, x, k)).sum();
                worst = worst.max((scorer.score_activations(probe.iter().copied()) - expected).abs());
                cases += 1;
            }
        }
    }

    // end to end through a trained network's hidden activations
    let d = 6;
    let vs: Vec<TestVector> = (0..120)
        .map(|i| TestVector::new(i, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let cov: Vec<CoverageRecord> = vs
        .iter()
        .map(|v| CoverageRecord::from_events(v.test_id, 3, (0..3).filter(|&e| v.values[e] > 0.0)))
        .collect();
    let cfg = covsel_core::TrainConfig::default().with_loss(Loss::BinaryCrossEntropy);
    let s = DensityScorer::train(
        &vs,
        &cov,
        &[0, 1, 2],
        &[d, 10, 8, 3],
        Activation::leaky_relu(),
        &cfg,
        15,
        7,
    )
    .unwrap();
    let hidden_of = |v: &TestVector| -> Vec<Vec<f64>> {
        let mut a = v.values.clone();
        let mut out = Vec::new();
        for (l, spec) in s.model.layers().iter().skip(1).enumerate() {
            let single = MlpModel::from_parts(
                vec![LayerSpec::input(a.len()), *spec],
                vec![s.model.weights()[l].clone()],
                vec![s.model.biases()[l].clone()],
                0,
            )
            .unwrap();
            a = naive_forward(&single, &a);
            out.push(a.clone());
        }
        out.pop();
        out
    };
    let train_hidden: Vec<Vec<f64>> = vs.iter().map(|v| hidden_of(v).concat()).collect();
    for v in vs.iter().take(40) {
        let probe = TestVector::new(999, v.values.iter().map(|x| x * 1.7 - 0.2).collect());
        let h = hidden_of(&probe).concat();
        let expected: f64 = (0..h.len())
            .map(|j| {
                let column: Vec<f64> = train_hidden.iter().map(|r| r[j]).collect();
                brute_force_knn(&column, h[j], 15)
            })
            .sum();
        worst = worst.max((s.score(&probe).unwrap() - expected).abs());
        cases += 1;
    }
    check(
        worst <= KNN_TOL,
        format!("{cases} probes, K in {{1, 5, 15}}, max |diff| {worst:.2e} (<= {KNN_TOL:e})"),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for _ in 0..CN_PAIRS {
        let e = rng.gen_range(1..=60);
        let hit: Vec<bool> = (0..e).map(|_| rng.gen_bool(0.3)).collect();
        let counts: Vec<u32> = hit
            .iter()
            .map(|&h| {
                if h {
                    rng.gen_range(1..5000)
                } else {
                    rng.gen_range(0..5000)
                }
            })
            .collect();
        let mut expected = 0.0;
        for i in 0..e {
            if hit[i] {
                let c = counts[i] as f64;
                expected += 1.0 / (c * c.sqrt());
            }
        }
        let record = CoverageRecord::from_events(0, e, (0..e).filter(|&i| hit[i]));
        let got = coverage_novelty_label(&record, &HitCounts { counts }).unwrap();
        if got != expected {
            mismatches += 1;
        }
    }
    let counts = HitCounts { counts: vec![1, 7, 3] };
    let zero = coverage_novelty_label(&CoverageRecord::new(0, 3), &counts).unwrap();
    let one = coverage_novelty_label(&CoverageRecord::from_events(0, 3, [0]), &counts).unwrap();
    check(
        mismatches == 0 && zero == 0.0 && one == 1.0,
        format!("{CN_PAIRS} pairs, {mismatches} inexact; anchors: no hits -> {zero}, single hit with count 1 -> {one}"),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for _ in 0..STD_MATRICES {
        let rows = rng.gen_range(2..200);
        let cols = rng.gen_range(1..20);
        let constant: Vec<bool> = (0..cols).map(|_| rng.gen_bool(0.15)).collect();
        let scale: Vec<f64> = (0..cols).map(|_| 10f64.powf(rng.gen_range(-3.0..4.0))).collect();
        let offset: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|c| {
                        if constant[c] {
                            offset[c]
                        } else {
                            offset[c] + scale[c] * rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let s = Standardizer::fit(&data, CONSTANT_TOLERANCE).unwrap();
        let t: Vec<Vec<f64>> = data.iter().map(|r| s.transform_values(r).unwrap()).collect();
        for c in (0..cols).filter(|&c| !s.constant_mask[c]) {
            let mean = t.iter().map(|r| r[c]).sum::<f64>() / rows as f64;
            let var = t.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / rows as f64;
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((var.sqrt() - 1.0).abs());
        }
    }
    check(
        worst_mean < STD_TOL && worst_std < STD_TOL,
        format!("{STD_MATRICES} matrices, max |mean| {worst_mean:.2e}, max |std - 1| {worst_std:.2e} (< {STD_TOL:e})"),
    )
}

fn small_dut(seed: u64) -> (SyntheticDut, Vec<TestVector>) {
    let mut cfg = DutConfig::new(seed, 16, 120, TierMix::DESK);
    cfg.reference_pool_size = 3000;
    let dut = SyntheticDut::generate(cfg).unwrap();
    let pool = dut.schema().encode_all(&dut.reference_pool()).unwrap();
    (dut, pool)
}

fn loop_problems(state: &LoopState, cfg: &LoopConfig) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    if !state.selected.iter().all(|s| seen.insert(s.test_id)) {
        problems.push("a test was simulated twice".into());
    }
    if state.trace.windows(2).any(|w| w[1] < w[0])
        || state
            .rounds
            .windows(2)
            .any(|w| w[1].covered_events < w[0].covered_events)
    {
        problems.push("coverage decreased".into());
    }
    let mut expected = 0;
    for r in &state.rounds {
        let want = if r.round == 0 {
            cfg.initial_count
        } else {
            cfg.batch_size
        };
        let before = expected;
        expected = (expected + want).min(state.pool_size);
        if r.simulated != expected || r.selected_ids.len() != expected - before {
            problems.push(format!(
                "round {} simulated {} tests, expected {expected}",
                r.round, r.simulated
            ));
        }
    }
    if state.selected.len() != state.trace.len() || state.selected.len() != expected {
        problems.push("simulated-set size disagrees with the round log".into());
    }
    problems
}

fn deterministic_view(s: &LoopState) -> LoopState {
    let mut s = s.clone();
    for r in &mut s.rounds {
        r.wall_time = Default::default();
    }
    s
}

fn criterion_6(tmp: &Path) -> Verdict {
    let (dut, pool) = small_dut(11);
    let mut problems = Vec::new();
    let mut runs = 0;
    for (i, policy) in [
        SelectionPolicy::Random,
        SelectionPolicy::Novelty(ScorerConfig::new(ScorerKind::Autoencoder)),
        SelectionPolicy::Novelty(ScorerConfig::new(ScorerKind::Density)),
        SelectionPolicy::Novelty(ScorerConfig::new(ScorerKind::CoverageNovelty)),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = LoopConfig {
            initial_count: 100,
            batch_size: 250,
            target_coverage: 1.0,
            max_rounds: 6,
            policy,
            seeds: LoopSeeds {
                sampling: 30 + i as u64,
                model: 40 + i as u64,
            },
        };
        let full = run_loop(&pool, &dut, cfg.clone()).unwrap();
        problems.extend(loop_problems(&full, &cfg));

        // interrupt after round 2, persist, and resume from disk
        let trainer = trainer_for(&cfg, dut.num_events());
        let t = trainer.as_ref().map(|t| t as &dyn ScorerTrainer);
        let mut lp = SelectionLoop::new(&pool, &dut, cfg.clone(), t).unwrap();
        for _ in 0..3 {
            lp.step().unwrap();
        }
        let path = tmp.join(format!("ckpt{i}.json"));
        lp.state().save(&path).unwrap();
        drop(lp);
        let mut resumed = SelectionLoop::resume(&pool, &dut, LoopState::load(&path).unwrap(), t).unwrap();
        while resumed.step().unwrap() {}
        let resumed = resumed.into_state();

        let (a, b) = (tmp.join(format!("full{i}")), tmp.join(format!("resumed{i}")));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        full.write_outputs(&a).unwrap();
        resumed.write_outputs(&b).unwrap();
        for f in ["rounds.csv", "selected.csv", "coverage.csv"] {
            if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
                problems.push(format!("{} resume changed {f}", cfg.policy.name()));
            }
        }
        if deterministic_view(&full) != deterministic_view(&resumed) {
            problems.push(format!("{} resume changed the loop state", cfg.policy.name()));
        }
        runs += 1;
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{runs} policies: no duplicates, monotone coverage, exact set sizes, kill-resume identical")
        } else {
            problems.join("; ")
        },
    )
}

struct DeskResults {
    c7: Verdict,
    c8: Verdict,
    c9: Verdict,
}

fn desk_experiment() -> DeskResults {
    let start = Instant::now();
    let mut dut_cfg = DutConfig::desk(DUT_SEED);
    dut_cfg.reference_pool_size = DESK_POOL;
    let dut = SyntheticDut::generate(dut_cfg).unwrap();
    assert_eq!((dut.num_features(), dut.num_events()), (DESK_FEATURES, DESK_EVENTS));
    let pool = dut.schema().encode_all(&dut.reference_pool()).unwrap();
    assert_eq!(pool.len(), DESK_POOL);

    let mut cfg = ExperimentConfig::new(
        ScorerKind::ALL.iter().map(|&k| ScorerConfig::new(k)).collect(),
        EXPERIMENT_SEED,
    );
    cfg.repetitions = DESK_REPS;
    cfg.baseline_repetitions = DESK_BASELINES;
    cfg.baseline_rank = Some(BASELINE_RANK);
    cfg.initial_count = DESK_INITIAL;
    cfg.batch_size = DESK_BATCH;
    cfg.targets = vec![DESK_TARGET];
    let outcome = match run_experiment(&pool, &dut, &cfg) {
        Ok(o) => o,
        Err(e) => {
            let msg = format!("experiment failed: {e}");
            return DeskResults {
                c7: Err(msg.clone()),
                c8: Err(msg.clone()),
                c9: Err(msg),
            };
        }
    };
    let secs = start.elapsed().as_secs_f64();

    let mut parts = Vec::new();
    let mut each_ok = true;
    let mut best: Option<(ScorerKind, f64)> = None;
    let mut median = 0;
    for kind in ScorerKind::ALL {
        let r = outcome.report(kind, DESK_TARGET).unwrap();
        median = r.baseline_median;
        let below = r.beats_median();
        each_ok &= below >= MIN_REPS_BELOW_MEDIAN;
        parts.push(format!(
            "{kind} {below}/{DESK_REPS} below median, avg saving {:.1}% {:?}",
            r.average * 100.0,
            r.tests_to_target
        ));
        if best.is_none_or(|(_, s)| r.average > s) {
            best = Some((kind, r.average));
        }
    }
    let (best_kind, best_saving) = best.unwrap();
    let baseline = outcome.report(best_kind, DESK_TARGET).unwrap().baseline_tests;
    let c7 = check(
        each_ok && best_saving >= MIN_BEST_AVG_SAVING,
        format!(
            "random median {median}, {BASELINE_RANK}th-best {baseline}; {}; best {best_kind} {:.1}% (>= {:.0}%); {secs:.0} s",
            parts.join("; "),
            best_saving * 100.0,
            MIN_BEST_AVG_SAVING * 100.0
        ),
    );

    let positions = &outcome.baseline.curve_positions;
    let quarter = positions.iter().position(|&p| p == DESK_POOL / 4).unwrap();
    let full = positions.iter().position(|&p| p == DESK_POOL).unwrap();
    let (q, f) = (
        outcome.baseline.median_curve[quarter],
        outcome.baseline.median_curve[full],
    );
    let c8 = check(
        q as f64 > CONCAVITY_FRACTION * f as f64,
        format!(
            "median random coverage at 25% of pool {q} events vs {f} at 100% (ratio {:.3} > {CONCAVITY_FRACTION})",
            q as f64 / f as f64
        ),
    );

    let mut shared = true;
    let mut distinct = HashSet::new();
    for rep in 0..DESK_REPS {
        let ids: Vec<&Vec<u64>> = outcome
            .runs
            .iter()
            .filter(|r| r.repetition == rep)
            .map(|r| &r.initial_ids)
            .collect();
        shared &= ids.len() == ScorerKind::ALL.len() && ids.windows(2).all(|w| w[0] == w[1]);
        shared &= ids[0].len() == DESK_INITIAL;
        distinct.insert(ids[0].clone());
    }
    let c9 = check(
        shared && distinct.len() == DESK_REPS,
        format!(
            "{DESK_REPS} repetitions share initial ids across all scorers; {} distinct initial sets",
            distinct.len()
        ),
    );
    DeskResults { c7, c8, c9 }
}

fn covsel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_covsel"))
        .args(args)
        .env_remove("COVSEL_OUT_ROOT")
        .output()
        .expect("covsel runs")
}

fn csv_values(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            l.split(',')
                .map(|f| match f.parse::<f64>() {
                    Ok(v) => format!("{v:e}"),
                    Err(_) => f.to_string(),
                })
                .collect()
        })
        .collect()
}

fn criterion_10(tmp: &Path) -> Verdict {
    let d = |name: &str| tmp.join(name).to_string_lossy().into_owned();
    let mut problems = Vec::new();
    let mut ok = |out: std::process::Output, what: &str| {
        if !out.status.success() {
            problems.push(format!(
                "{what} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    };
    let gen = [
        "gen",
        "--seed",
        "3",
        "--features",
        "16",
        "--events",
        "120",
        "--pool-size",
        "3000",
    ];
    ok(covsel(&[&gen[..], &["--out", &d("g")]].concat()), "gen");
    ok(
        covsel(&[
            "replay",
            "--manifest",
            &d("g/manifest.json"),
            "--out",
            &d("g2"),
            "--verify",
        ]),
        "gen replay",
    );

    let exp = |jobs: &str, out: &str| {
        covsel(&[
            "experiment",
            "--scorers",
            "all",
            "--reps",
            "2",
            "--baseline-reps",
            "60",
            "--targets",
            "0.95,0.99",
            "--batch",
            "300",
            "--seed",
            "8",
            "--in",
            &d("g"),
            "--out",
            &d(out),
            "--jobs",
            jobs,
        ])
    };
    ok(exp("1", "e1"), "experiment --jobs 1");
    ok(
        covsel(&[
            "replay",
            "--manifest",
            &d("e1/manifest.json"),
            "--out",
            &d("e2"),
            "--jobs",
            "1",
            "--verify",
        ]),
        "experiment replay",
    );
    ok(exp("4", "e4"), "experiment --jobs 4");

    let run = |jobs: &str, out: &str| {
        covsel(&[
            "run",
            "--scorer",
            "density",
            "--target",
            "0.99",
            "--batch",
            "300",
            "--seed-model",
            "5",
            "--in",
            &d("g"),
            "--out",
            &d(out),
            "--jobs",
            jobs,
        ])
    };
    ok(run("1", "r1"), "run --jobs 1");
    ok(
        covsel(&[
            "replay",
            "--manifest",
            &d("r1/manifest.json"),
            "--out",
            &d("r2"),
            "--jobs",
            "1",
            "--verify",
        ]),
        "run replay",
    );
    ok(run("4", "r4"), "run --jobs 4");
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }

    let mut compared = 0;
    let same_bytes =
        |a: &str, b: &str, f: &str| std::fs::read(tmp.join(a).join(f)).ok() == std::fs::read(tmp.join(b).join(f)).ok();
    for f in ["dut.json", "schema.json", "pool.csv"] {
        compared += 1;
        if !same_bytes("g", "g2", f) {
            problems.push(format!("gen replay changed {f}"));
        }
    }
    for (a, b, files) in [
        (
            "e1",
            "e2",
            &[
                "tableI.csv",
                "baseline.csv",
                "baseline_hist.csv",
                "curves.csv",
                "repetitions.csv",
            ][..],
        ),
        ("r1", "r2", &["rounds.csv", "selected.csv", "coverage.csv"][..]),
    ] {
        for f in files {
            compared += 1;
            if !same_bytes(a, b, f) {
                problems.push(format!("replay of {a} changed {f}"));
            }
        }
    }
    for (a, b, files) in [
        (
            "e1",
            "e4",
            &[
                "tableI.csv",
                "baseline.csv",
                "baseline_hist.csv",
                "curves.csv",
                "repetitions.csv",
            ][..],
        ),
        ("r1", "r4", &["rounds.csv", "selected.csv", "coverage.csv"][..]),
    ] {
        for f in files {
            compared += 1;
            if csv_values(&tmp.join(a).join(f)) != csv_values(&tmp.join(b).join(f)) {
                problems.push(format!("--jobs 4 changed values in {b}/{f}"));
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{compared} files: replays byte-identical with --jobs 1, --jobs 4 value-identical")
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes us is a no-op
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let desk = desk_experiment();
    let results = [
        ("1", "gradient correctness", criterion_1()),
        ("2", "autoencoder score oracle", criterion_2()),
        ("3", "density score oracle", criterion_3()),
        ("4", "coverage-novelty label exactness", criterion_4()),
        ("5", "standardization refit", criterion_5()),
        ("6", "loop invariants and kill-resume", criterion_6(tmp.path())),
        ("7", "desk-scale savings vs random", desk.c7),
        ("8", "random baseline concavity", desk.c8),
        ("9", "shared initial tests per repetition", desk.c9),
        (
            "10",
            "determinism across replays and job counts",
            criterion_10(tmp.path()),
        ),
    ];
    let mut failed = 0;
    for (id, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
