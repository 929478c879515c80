//! Experiment-level acceptance checks. Each test prints one `criterion N
//! (...): pass` line; the expensive curriculum artifacts are built once
//! and shared.
//!
//! Heavy tests serialize on a global lock so per-criterion wall-clock
//! budgets are meaningful on a single core. Set FEDNAV_FULL=1 to run the
//! curriculum at full fusion scale (50k samples per fusion).

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use once_cell::sync::Lazy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fednav::agent::{self, InitMode};
use fednav::cloud::registry::nav_registry;
use fednav::cloud::{model_checksum, serve, CloudClient, FusionPolicy};
use fednav::env::{ACTION_COUNT, OBS_DIM};
use fednav::fusion::{self, argmax, confidence, fuse_labels, memory_weights, ActorSet, FusionConfig, InputLayout};
use fednav::harness::{
    builtin_world, inter_seed_score_std, run_lifelong, run_transfer_comparison, world_config,
    CloudAccess, ComparisonReport, ExperimentPlan, StagePlan,
};
use fednav::nn::{gradient_check, NetworkParameters, TrainingBatch};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, what: &str, ok: bool, detail: &str) {
    if ok {
        println!("criterion {n} ({what}): pass [{detail}]");
    } else {
        println!("criterion {n} ({what}): FAIL [{detail}]");
    }
    assert!(ok, "criterion {n} ({what}): {detail}");
}

fn quick_fusion() -> FusionConfig {
    if std::env::var("FEDNAV_FULL").is_ok() {
        FusionConfig::default()
    } else {
        FusionConfig::quick()
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Bundle {
    plan: ExperimentPlan,
    lifelong: fednav::harness::LifelongOutcome,
    lifelong_secs: f64,
    out_dir: tempfile::TempDir,
}

static BUNDLE: Lazy<Bundle> = Lazy::new(|| {
    let plan = ExperimentPlan::curriculum(&SEEDS);
    let out_dir = tempfile::tempdir().unwrap();
    let diagonal = plan.stages[0].world.diagonal();
    let t0 = Instant::now();
    let lifelong = run_lifelong(&plan, out_dir.path(), |seed| {
        let reg = nav_registry(None, seed, diagonal, quick_fusion())?;
        Ok(CloudAccess::InProcess(Arc::new(reg)))
    })
    .expect("lifelong curriculum runs");
    Bundle {
        plan,
        lifelong,
        lifelong_secs: t0.elapsed().as_secs_f64(),
        out_dir,
    }
});

fn random_scores(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(-500.0..500.0)).collect()
}

#[test]
fn c1_fusion_weighting_properties() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfu64);
    let cases = 10_000;
    for _ in 0..cases {
        let m = rng.gen_range(2..=8);
        let n = rng.gen_range(1..=6);

        // Confidence range and scale invariance.
        let scores = random_scores(&mut rng, m);
        let c = confidence(&scores);
        assert!((0.0..=1.0).contains(&c), "confidence {c} out of range for {scores:?}");
        let lambda = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = scores.iter().map(|s| s * lambda).collect();
        assert!(
            (c - confidence(&scaled)).abs() < 1e-9,
            "confidence not scale invariant: {scores:?} x{lambda}"
        );

        // Uniform rows are maximally uncertain, one-hot rows certain.
        let level = rng.gen_range(0.1..100.0);
        assert_eq!(confidence(&vec![level; m]), 1.0);
        let mut one_hot = vec![0.0; m];
        one_hot[rng.gen_range(0..m)] = level;
        assert!(confidence(&one_hot).abs() < 1e-12);

        // Weights form a convex combination.
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_scores(&mut rng, m)).collect();
        let confidences: Vec<f64> = rows.iter().map(|r| confidence(r)).collect();
        let weights = memory_weights(&confidences);
        assert!(weights.iter().all(|w| *w >= 0.0));
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "weights sum {total}");

        // Labels stay inside the per-action envelope of the actor scores.
        let label = fuse_labels(&rows);
        for a in 0..m {
            let lo = rows.iter().map(|r| r[a]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[a]).fold(f64::NEG_INFINITY, f64::max);
            assert!(
                label[a] >= lo - 1e-9 && label[a] <= hi + 1e-9,
                "label {} outside [{lo}, {hi}]",
                label[a]
            );
        }

        // Unanimous argmax survives weighting.
        let k = rng.gen_range(0..m);
        let unanimous: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut row = random_scores(&mut rng, m);
                let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row[k] = top + rng.gen_range(0.1..50.0);
                row
            })
            .collect();
        assert_eq!(argmax(&fuse_labels(&unanimous)), k);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "entropy weighting invariants over randomized score sets",
        secs < 60.0,
        &format!("{cases} cases in {secs:.1}s"),
    );
}

#[test]
fn c2_sharper_scorer_gets_more_weight() {
    let sharp = [20.0, 20.0, 100.0, 10.0, 10.0];
    let flat = [85.0, 85.0, 84.0, 83.0, 86.0];

    // Independent oracle: normalized entropy computed from first
    // principles, no shifting (both rows are positive).
    fn oracle(scores: &[f64]) -> f64 {
        let sum: f64 = scores.iter().sum();
        let h: f64 = scores
            .iter()
            .map(|s| {
                let p = s / sum;
                -p * p.ln()
            })
            .sum();
        h / (scores.len() as f64).ln()
    }

    let c_sharp = confidence(&sharp);
    let c_flat = confidence(&flat);
    let ok = (c_sharp - oracle(&sharp)).abs() < 1e-9
        && (c_flat - oracle(&flat)).abs() < 1e-9
        && c_sharp < c_flat;

    let weights = memory_weights(&[c_sharp, c_flat]);
    let label = fuse_labels(&[sharp.to_vec(), flat.to_vec()]);
    let ok = ok
        && weights[0] > weights[1]
        && (weights[0] - 0.99986).abs() < 5e-5
        && (label[2] - 99.998).abs() < 1e-2
        && argmax(&label) == 2;
    report(
        2,
        "sharper scorer dominates the fused label",
        ok,
        &format!(
            "c_sharp {c_sharp:.4} < c_flat {c_flat:.5}, w {weights:.5?}, label argmax {}",
            argmax(&label)
        ),
    );
}

#[test]
fn c3_single_actor_self_fusion_fidelity() {
    let _lock = heavy();
    let t0 = Instant::now();
    let env1 = builtin_world("env-1").unwrap();
    let mut config = world_config("env-1");
    config.seed = 5;
    let teacher = agent::train(&env1, &config, InitMode::Fresh { seed: 5 })
        .unwrap()
        .params;

    let mut fusion_config = FusionConfig::quick();
    fusion_config.sample_count = 5_000;
    let layout = InputLayout::lidar_nav(env1.diagonal());
    let set = ActorSet::new(vec![teacher]).unwrap();
    let (_, rep) = fusion::fuse(&set, &layout, &fusion_config).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        3,
        "self-fusion reproduces the lone actor",
        rep.holdout_mse <= 1.0 && rep.argmax_agreement >= 0.95 && secs < 600.0,
        &format!(
            "holdout mse {:.3}, argmax agreement {:.3}, {secs:.0}s",
            rep.holdout_mse, rep.argmax_agreement
        ),
    );
}

/// Smallest relu pre-activation magnitude over all hidden units and
/// inputs. Central differences are only valid away from the kink, so
/// batches that land a unit within the probe step of zero are resampled.
fn kink_margin(net: &NetworkParameters, inputs: &[Vec<f64>]) -> f64 {
    let dims = net.layer_dims();
    let mut margin = f64::INFINITY;
    for input in inputs {
        let mut current = input.clone();
        for l in 0..dims.len() - 2 {
            let (rows, cols) = (dims[l + 1], dims[l]);
            let mut next = vec![0.0; rows];
            for r in 0..rows {
                let mut z = net.biases()[l][r];
                for c in 0..cols {
                    z += net.weights()[l][r * cols + c] * current[c];
                }
                margin = margin.min(z.abs());
                next[r] = z.max(0.0);
            }
            current = next;
        }
    }
    margin
}

#[test]
fn c4_analytic_gradients_match_numeric() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 20 {
        let hidden = rng.gen_range(3..=10);
        let hidden2 = rng.gen_range(3..=8);
        let dims = [4, hidden, hidden2, 3];
        let params: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert!(params <= 500, "test network too large ({params} params)");
        let net = NetworkParameters::init_random(&dims, rng.gen()).unwrap();
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        if kink_margin(&net, &inputs) < 1e-3 {
            continue;
        }
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let batch = TrainingBatch { inputs, targets };
        let err = gradient_check(&net, &batch).unwrap();
        worst = worst.max(err);
        checked += 1;
    }
    report(
        4,
        "backprop agrees with central differences",
        worst < 1e-4,
        &format!("max relative error {worst:.2e} over {checked} networks"),
    );
}

#[test]
fn c5_curriculum_beats_scratch_on_later_stages() {
    let _lock = heavy();
    let bundle = &*BUNDLE;
    let report_data = &bundle.lifelong.report;

    let mut ok = true;
    let mut detail = String::new();
    for (g, stage) in bundle.plan.stages.iter().enumerate() {
        let name = &stage.world.name;
        let lfrl = report_data.row("lfrl", name).unwrap();
        let scratch = report_data.row("scratch", name).unwrap();
        if g == 0 {
            // First stage: nothing to transfer yet, the arms must be
            // statistically indistinguishable (overlapping ranges).
            let overlap = lfrl.min_episodes <= scratch.max_episodes
                && scratch.min_episodes <= lfrl.max_episodes;
            ok &= overlap;
            detail.push_str(&format!(
                "{name}: lfrl {:.0}..{:.0} vs scratch {:.0}..{:.0}; ",
                lfrl.min_episodes, lfrl.max_episodes, scratch.min_episodes, scratch.max_episodes
            ));
        } else {
            ok &= lfrl.median_episodes < scratch.median_episodes;
            detail.push_str(&format!(
                "{name}: median {:.0} vs {:.0}; ",
                lfrl.median_episodes, scratch.median_episodes
            ));
        }
    }
    let in_budget = bundle.lifelong_secs < 1800.0;
    detail.push_str(&format!("{:.0}s", bundle.lifelong_secs));
    report(
        5,
        "warm-started curriculum reaches thresholds faster than scratch",
        ok && in_budget,
        &detail,
    );
}

#[test]
fn c6_shared_model_generalizes_to_held_out_worlds() {
    let _lock = heavy();
    let bundle = &*BUNDLE;
    let seed = SEEDS[0];
    let shared = bundle.lifelong.shared_by_seed[&seed].clone();
    let mut candidates = vec![("shared".to_string(), shared)];
    for stage_index in 0..3 {
        candidates.push((
            format!("model-{}", stage_index + 1),
            bundle.lifelong.scratch_models[&(seed, stage_index)].clone(),
        ));
    }
    let stages: Vec<StagePlan> = ["test-env-1", "test-env-2", "test-env-3"]
        .iter()
        .map(|name| StagePlan {
            world: builtin_world(name).unwrap(),
            config: world_config(name),
        })
        .collect();
    let out = bundle.out_dir.path().join("generalize");
    let rep =
        fednav::harness::run_generalization(&candidates, &stages, &SEEDS, 120, &out).unwrap();

    let (ok, detail) = generalization_ordinals(&rep, &candidates, &stages);
    report(6, "shared model ranks near the top in every held-out world", ok, &detail);
}

fn generalization_ordinals(
    rep: &ComparisonReport,
    candidates: &[(String, NetworkParameters)],
    stages: &[StagePlan],
) -> (bool, String) {
    let mut ok = true;
    let mut detail = String::new();
    let mut eps_firsts: std::collections::HashMap<&str, usize> = Default::default();
    let mut score_firsts: std::collections::HashMap<&str, usize> = Default::default();
    for stage in stages {
        let env = &stage.world.name;
        // Rank low-to-high on episodes, high-to-low on closing scores.
        let mut by_eps: Vec<&str> = candidates.iter().map(|(n, _)| n.as_str()).collect();
        by_eps.sort_by(|a, b| {
            let ea = rep.row(a, env).unwrap().median_episodes;
            let eb = rep.row(b, env).unwrap().median_episodes;
            ea.partial_cmp(&eb).unwrap()
        });
        let mut by_score: Vec<&str> = candidates.iter().map(|(n, _)| n.as_str()).collect();
        by_score.sort_by(|a, b| {
            let sa = rep.row(a, env).unwrap().mean_last_five;
            let sb = rep.row(b, env).unwrap().mean_last_five;
            sb.partial_cmp(&sa).unwrap()
        });
        let eps_rank = by_eps.iter().position(|n| *n == "shared").unwrap();
        let score_rank = by_score.iter().position(|n| *n == "shared").unwrap();
        ok &= eps_rank <= 1 && score_rank <= 1;
        if by_eps[0] != "shared" {
            *eps_firsts.entry(by_eps[0]).or_default() += 1;
        }
        if by_score[0] != "shared" {
            *score_firsts.entry(by_score[0]).or_default() += 1;
        }
        detail.push_str(&format!(
            "{env}: shared eps-rank {} score-rank {}; ",
            eps_rank + 1,
            score_rank + 1
        ));
    }
    // No generic dominates: first place in at most one world per metric.
    for (metric, firsts) in [("eps", &eps_firsts), ("score", &score_firsts)] {
        for (name, count) in firsts {
            ok &= *count <= 1;
            detail.push_str(&format!("{name} {metric}-firsts {count}; "));
        }
    }
    (ok, detail)
}

#[test]
fn c7_transfer_mode_ordering() {
    let _lock = heavy();
    let bundle = &*BUNDLE;
    let shared = bundle.lifelong.shared_by_seed[&SEEDS[0]].clone();
    let stage = StagePlan {
        world: builtin_world("test-env-1").unwrap(),
        config: world_config("test-env-1"),
    };
    let out = bundle.out_dir.path().join("transfer");
    let comparison =
        run_transfer_comparison(&shared, &stage, &SEEDS, 250, &out).unwrap();
    let rep = &comparison.report;
    let env = &stage.world.name;
    let warm = rep.row("warm-start", env).unwrap().median_episodes;
    let feature = rep.row("feature-extractor", env).unwrap().median_episodes;
    let scratch = rep.row("scratch", env).unwrap().median_episodes;
    let warm_std = inter_seed_score_std(&comparison.logs["warm-start"]);
    let feature_std = inter_seed_score_std(&comparison.logs["feature-extractor"]);
    let ok = warm < feature && feature < scratch && feature_std < warm_std;
    report(
        7,
        "warm start learns fastest, feature extraction steadiest",
        ok,
        &format!(
            "median episodes warm {warm:.0} / feature {feature:.0} / scratch {scratch:.0}; \
             inter-seed std feature {feature_std:.1} vs warm {warm_std:.1}"
        ),
    );
}

#[test]
fn c8_protocol_round_trip_and_races() {
    let _lock = heavy();
    let mut fusion_config = FusionConfig::quick();
    fusion_config.sample_count = 500;
    fusion_config.holdout_count = 100;
    fusion_config.hidden_dims = vec![16];
    fusion_config.train.epochs = 5;
    fusion_config.train.stop_loss = None;
    let registry = nav_registry(None, 1, 5.66, fusion_config).unwrap();
    let server = serve("127.0.0.1:0", Arc::new(registry), FusionPolicy::Manual).unwrap();
    let addr = server.addr.to_string();

    // Round trip: the downloaded model is byte-for-byte the stored one.
    let mut client = CloudClient::connect(&addr, "r0").unwrap();
    let (gen0, downloaded) = client.download_shared().unwrap();
    let round_trip = gen0 == 0
        && model_checksum(&downloaded) == model_checksum(&server.registry().current().params);

    // Eight concurrent uploads, each ACKed exactly once.
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let addr = addr.clone();
            std::thread::spawn(move || {
                let net =
                    NetworkParameters::init_random(&[OBS_DIM, 16, ACTION_COUNT], 50 + i).unwrap();
                CloudClient::connect(&addr, &format!("r{i}"))
                    .unwrap()
                    .upload_private(&net, "env-x")
                    .unwrap()
            })
        })
        .collect();
    let ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let unique: std::collections::HashSet<&String> = ids.iter().collect();
    let acked_once = unique.len() == 8 && server.registry().pending_len() == 8;
    server.registry().trigger_fusion().unwrap();
    let one_batch = server.registry().pending_len() == 0
        && server.registry().current().report.as_ref().unwrap().n_actors == 8;

    // Downloads racing fusion installs always see whole generations.
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let reader = {
        let addr = addr.clone();
        let stop = stop.clone();
        std::thread::spawn(move || {
            let mut client = CloudClient::connect(&addr, "reader").unwrap();
            let mut seen = Vec::new();
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                let (gen, params) = client.download_shared().unwrap();
                seen.push((gen, model_checksum(&params)));
            }
            seen
        })
    };
    for round in 0..4u64 {
        let net = NetworkParameters::init_random(&[OBS_DIM, 16, ACTION_COUNT], 90 + round).unwrap();
        server.registry().enqueue_upload(net, "w", "env-y");
        server.registry().trigger_fusion().unwrap();
    }
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    let torn_free = reader.join().unwrap().into_iter().all(|(gen, checksum)| {
        server
            .registry()
            .record(gen)
            .is_some_and(|rec| model_checksum(&rec.params) == checksum)
    });
    server.shutdown();

    report(
        8,
        "cloud protocol is lossless, exactly-once, and tear-free",
        round_trip && acked_once && one_batch && torn_free,
        &format!("round_trip {round_trip}, acked_once {acked_once}, one_batch {one_batch}, torn_free {torn_free}"),
    );
}

#[test]
fn c9_fixed_seeds_reproduce_identical_csvs() {
    let _lock = heavy();
    let mut plan = ExperimentPlan::curriculum(&[3]);
    plan.stages.truncate(2);
    for stage in &mut plan.stages {
        stage.config.max_episodes = 40;
        stage.config.score_threshold = 1e9;
    }
    let mut fusion_config = FusionConfig::quick();
    fusion_config.sample_count = 500;
    fusion_config.holdout_count = 50;
    fusion_config.train.epochs = 5;

    let run = |dir: &std::path::Path| {
        let fc = fusion_config.clone();
        run_lifelong(&plan, dir, move |seed| {
            let reg = nav_registry(None, seed, 5.66, fc.clone())?;
            Ok(CloudAccess::InProcess(Arc::new(reg)))
        })
        .unwrap();
        let mut csvs: Vec<(String, Vec<u8>)> = walk_csvs(dir);
        csvs.sort();
        csvs
    };

    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = run(a_dir.path());
    let b = run(b_dir.path());
    let ok = !a.is_empty() && a == b;
    report(
        9,
        "repeat runs emit byte-identical episode CSVs",
        ok,
        &format!("{} CSV files compared", a.len()),
    );
}

fn walk_csvs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}
