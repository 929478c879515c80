// Throwaway bring-up diagnostics; not part of the deliverable.
use std::path::Path;
use std::sync::Arc;

use fednav::agent::EpisodeLog;
use fednav::cloud::registry::nav_registry;
use fednav::cloud::{decode_model, encode_model};
use fednav::fusion::FusionConfig;
use fednav::harness::*;
use fednav::nn::NetworkParameters;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn save(path: &Path, p: &NetworkParameters) {
    std::fs::write(path, encode_model(p) + "\n").unwrap();
}
fn load(path: &Path) -> NetworkParameters {
    decode_model(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn print_report(rep: &ComparisonReport) {
    for row in &rep.rows {
        println!(
            "  {:<18} {:<12} med {:6.1} range {:5.1}..{:5.1} mean {:7.1} last5 {:7.1} {:?}",
            row.arm, row.stage, row.median_episodes, row.min_episodes, row.max_episodes,
            row.mean_score, row.mean_last_five, row.episodes_to_threshold
        );
    }
}

fn tail_std(per_seed: &[Vec<EpisodeLog>]) -> f64 {
    let n = per_seed.iter().map(|l| l.len()).min().unwrap();
    let tail: Vec<Vec<EpisodeLog>> = per_seed
        .iter()
        .map(|l| l[n - n / 4..n.min(l.len())].to_vec())
        .collect();
    inter_seed_score_std(&tail)
}

fn main() {
    let phase = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let base = Path::new("/root/exp");
    let models = base.join("models");
    std::fs::create_dir_all(&models).unwrap();

    if phase == "eval" || phase == "eval-probe" {
        let models = if phase == "eval-probe" {
            base.join("probe-registry-1")
        } else {
            models.clone()
        };
        let enc = fednav::agent::ObservationEncoder::Raw;
        let mut names: Vec<String> = std::fs::read_dir(&models)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".model"))
            .collect();
        names.sort();
        for name in names {
            let params = load(&models.join(&name));
            print!("{name:<34}");
            let worlds = if std::env::var("FEDNAV_TEST_WORLDS").is_ok() {
                test_world_names()
            } else {
                curriculum_world_names()
            };
            for world in worlds {
                let spec = builtin_world(world).unwrap();
                let s = fednav::agent::evaluate(&params, &spec, 30, &enc).unwrap();
                print!(" {world}: {:.2}/{:6.1}", s.goal_rate, s.mean_score);
            }
            println!();
        }
        return;
    }

    if phase == "anatomy" {
        use fednav::agent::{self, DqnConfig, InitMode};
        use fednav::fusion::{self, ActorSet, InputLayout};
        let gen3 = load(&base.join("probe-registry-1/shared-gen-3.model"));
        let world = builtin_world("env-4").unwrap();
        let mut config = world_config("env-4");
        config.seed = 1;
        config.env_seed_base = paired_env_base(3, 1);
        let stage4 = agent::train(&world, &warm_config(&config), InitMode::WarmStart(gen3.clone()))
            .unwrap()
            .params;
        let _ = &DqnConfig::default();
        let layout = InputLayout::lidar_nav(world.diagonal());
        let samples = fusion::generate_samples(5_000, 17u64.wrapping_add(4), &layout);
        for (name, net) in [("stage4", &stage4), ("gen3", &gen3)] {
            let wmax = net
                .weights()
                .iter()
                .flatten()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let outs: Vec<Vec<f64>> = samples.iter().map(|x| net.forward(x).unwrap()).collect();
            let omax = outs.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            let orms = (outs.iter().flatten().map(|v| v * v).sum::<f64>()
                / (outs.len() * 5) as f64)
                .sqrt();
            let conf: Vec<f64> = outs.iter().map(|r| fusion::confidence(r)).collect();
            let cmean = conf.iter().sum::<f64>() / conf.len() as f64;
            println!("{name}: max|w| {wmax:.2} max|out| {omax:.1} rms {orms:.1} mean conf {cmean:.5}");
        }
        let set = ActorSet::new(vec![stage4.clone(), gen3.clone()]).unwrap();
        let labels = fusion::label_samples(&set, &samples);
        let lrms = (labels.iter().flatten().map(|v| v * v).sum::<f64>()
            / (labels.len() * 5) as f64)
            .sqrt();
        println!("labels: rms {lrms:.1} trivial mse {:.1}", lrms * lrms);
        for (tag, mutate) in [
            ("quick default", Box::new(|_: &mut fednav::fusion::FusionConfig| {}) as Box<dyn Fn(&mut fednav::fusion::FusionConfig)>),
            ("epochs 3000", Box::new(|c: &mut fednav::fusion::FusionConfig| c.train.epochs = 3000)),
            ("lr 1e-3 epochs 3000", Box::new(|c: &mut fednav::fusion::FusionConfig| {
                c.train.learning_rate = 1e-3;
                c.train.epochs = 3000;
            })),
            ("K 20000", Box::new(|c: &mut fednav::fusion::FusionConfig| c.sample_count = 20_000)),
        ] {
            let mut fc = FusionConfig::quick();
            fc.sample_seed = 17u64.wrapping_add(4);
            fc.holdout_seed = 9_001u64.wrapping_add(4);
            fc.init_seed = 23u64.wrapping_add(4);
            mutate(&mut fc);
            let t = std::time::Instant::now();
            let (_, rep) = fusion::fuse(&set, &layout, &fc).unwrap();
            println!(
                "{tag}: mse {:.3} holdout {:.3} argmax {:.3} ({:.0?})",
                rep.label_mse, rep.holdout_mse, rep.argmax_agreement, t.elapsed()
            );
        }
        return;
    }

    if phase == "probe" {
        let plan = ExperimentPlan::curriculum(&[1]);
        let diag = plan.stages[0].world.diagonal();
        let outcome = run_lifelong(&plan, &base.join("probe"), |seed| {
            let dir = base.join(format!("probe-registry-{seed}"));
            let reg =
                nav_registry(Some(&dir), seed, diag, FusionConfig::quick()).unwrap();
            Ok(CloudAccess::InProcess(Arc::new(reg)))
        });
        println!("probe outcome: {:?}", outcome.map(|o| o.report));
        return;
    }

    if phase == "all" || phase == "lifelong" {
        let t0 = std::time::Instant::now();
        let plan = ExperimentPlan::curriculum(&SEEDS);
        let diag = plan.stages[0].world.diagonal();
        let outcome = run_lifelong(&plan, &base.join("lifelong"), |seed| {
            let reg = nav_registry(None, seed, diag, FusionConfig::quick()).unwrap();
            Ok(CloudAccess::InProcess(Arc::new(reg)))
        })
        .unwrap();
        println!("lifelong total {:.0?}", t0.elapsed());
        print_report(&outcome.report);
        for (seed, params) in &outcome.shared_by_seed {
            save(&models.join(format!("shared-seed-{seed}.model")), params);
        }
        for ((seed, stage), params) in &outcome.scratch_models {
            save(&models.join(format!("scratch-seed-{seed}-stage-{stage}.model")), params);
        }
    }

    if phase == "all" || phase == "generalize" {
        let t0 = std::time::Instant::now();
        let mut candidates = vec![(
            "shared".to_string(),
            load(&models.join("shared-seed-1.model")),
        )];
        for stage in 0..3 {
            candidates.push((
                format!("model-{}", stage + 1),
                load(&models.join(format!("scratch-seed-1-stage-{stage}.model"))),
            ));
        }
        let stages: Vec<StagePlan> = test_world_names()
            .iter()
            .map(|n| StagePlan {
                world: builtin_world(n).unwrap(),
                config: world_config(n),
            })
            .collect();
        let rep =
            run_generalization(&candidates, &stages, &SEEDS, 120, &base.join("generalize"))
                .unwrap();
        println!("generalize total {:.0?}", t0.elapsed());
        print_report(&rep);
    }

    if phase == "all" || phase.starts_with("transfer") {
        let shared = load(&models.join("shared-seed-1.model"));
        for world in ["env-2", "test-env-1"] {
            let t0 = std::time::Instant::now();
            let stage = StagePlan {
                world: builtin_world(world).unwrap(),
                config: world_config(world),
            };
            let cmp = run_transfer_comparison(
                &shared,
                &stage,
                &SEEDS,
                400,
                &base.join(format!("transfer-{world}")),
            )
            .unwrap();
            println!("transfer {world} total {:.0?}", t0.elapsed());
            print_report(&cmp.report);
            for (arm, logs) in &cmp.logs {
                println!(
                    "  {arm}: full std {:.1}, tail-quarter std {:.1}",
                    inter_seed_score_std(logs),
                    tail_std(logs)
                );
            }
        }
    }
}
