use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use fednav::cloud::registry::nav_registry;
use fednav::cloud::{decode_model, encode_model, model_checksum, FusionPolicy};
use fednav::env::load_world;
use fednav::fusion::{self, ActorSet, FusionConfig, InputLayout};
use fednav::harness::{
    builtin_world, emit_plots, run_generalization, run_lifelong, run_transfer_comparison,
    test_world_names, world_config, CloudAccess, ExperimentPlan, StagePlan,
};
use fednav::nn::NetworkParameters;

#[derive(Parser)]
#[command(
    name = "fednav",
    about = "Federated lidar-navigation experiments: train DQN agents in \
             simulated rooms, fuse their networks into shared-model \
             generations, and compare transfer strategies."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Comma-separated seeds, one full run per seed.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seed: Vec<u64>,
    /// Output directory for CSVs and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the lifelong curriculum (env-1..4) with a paired scratch arm.
    Lifelong {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Plan file (JSON); defaults to the built-in curriculum.
        #[arg(long)]
        config: Option<PathBuf>,
        /// "inproc" for an in-process registry per seed, or a TCP address
        /// of a running `fednav serve`.
        #[arg(long, default_value = "inproc")]
        cloud: String,
        /// Synthetic sample count per fusion (in-process mode).
        #[arg(long, default_value_t = 50_000)]
        fusion_samples: usize,
    },
    /// Warm-start candidate models in the held-out test worlds and rank them.
    Generalize {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Shared model file.
        #[arg(long)]
        shared: PathBuf,
        /// Generic (single-environment) model files.
        #[arg(long = "generic", required = true)]
        generics: Vec<PathBuf>,
        /// Fixed episode budget per candidate (no early stop).
        #[arg(long, default_value_t = 120)]
        episodes: usize,
    },
    /// Train scratch, warm-start and feature-extractor arms side by side.
    TransferCompare {
        #[command(flatten)]
        common: CommonRunArgs,
        #[arg(long)]
        shared: PathBuf,
        /// Built-in world name or path to a world file.
        #[arg(long, default_value = "env-2")]
        world: String,
        /// Fixed episode budget per arm (no early stop).
        #[arg(long, default_value_t = 300)]
        episodes: usize,
    },
    /// Run the cloud registry server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Directory for shared-gen-<g>.model files.
        #[arg(long, default_value = "models")]
        model_dir: PathBuf,
        /// Fuse after every N uploads.
        #[arg(long, default_value_t = 1)]
        fusion_every: usize,
        /// Seed for the generation-0 initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        fusion_samples: usize,
    },
    /// One-shot fusion of model files into a new model file.
    Fuse {
        /// Input model files (the actors).
        #[arg(required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "fused.model")]
        out: PathBuf,
        /// World whose observation ranges bound the synthetic samples.
        #[arg(long, default_value = "env-1")]
        world: String,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert episode CSVs to gnuplot-ready series and stacked data.
    Plot {
        /// Directory of episode CSVs.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_model(path: &Path) -> Result<NetworkParameters, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    decode_model(&text).map_err(|e| format!("bad model file {}: {e}", path.display()))
}

fn save_model(path: &Path, params: &NetworkParameters) -> Result<(), String> {
    let text = encode_model(params);
    std::fs::write(path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn resolve_world(name_or_path: &str) -> Result<fednav::env::WorldSpec, String> {
    if let Ok(world) = builtin_world(name_or_path) {
        return Ok(world);
    }
    let text = std::fs::read_to_string(name_or_path)
        .map_err(|e| format!("no built-in world {name_or_path:?} and cannot read it as a file: {e}"))?;
    load_world(&text).map_err(|e| e.to_string())
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Lifelong {
            common,
            config,
            cloud,
            fusion_samples,
        } => {
            let plan = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    ExperimentPlan::from_json(&text).map_err(|e| e.to_string())?
                }
                None => ExperimentPlan::curriculum(&common.seed),
            };
            let diagonal = plan.stages[0].world.diagonal();
            let out = common.out.clone();
            let outcome = run_lifelong(&plan, &common.out, |seed| {
                if cloud == "inproc" {
                    let mut fc = FusionConfig::default();
                    fc.sample_count = fusion_samples;
                    let dir = out.join(format!("cloud/seed-{seed}"));
                    std::fs::create_dir_all(&dir)?;
                    let reg = nav_registry(Some(&dir), seed, diagonal, fc)?;
                    Ok(CloudAccess::InProcess(Arc::new(reg)))
                } else {
                    Ok(CloudAccess::Tcp(cloud.clone()))
                }
            })
            .map_err(|e| e.to_string())?;
            print_report(&outcome.report);
            println!("report written to {}", common.out.join("report.json").display());
            Ok(())
        }
        Command::Generalize {
            common,
            shared,
            generics,
            episodes,
        } => {
            let mut candidates = vec![("shared".to_string(), load_model(&shared)?)];
            for path in &generics {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| path.display().to_string());
                candidates.push((name, load_model(path)?));
            }
            let stages: Vec<StagePlan> = test_world_names()
                .iter()
                .map(|name| StagePlan {
                    world: builtin_world(name).expect("builtin world"),
                    config: world_config(name),
                })
                .collect();
            let report =
                run_generalization(&candidates, &stages, &common.seed, episodes, &common.out)
                    .map_err(|e| e.to_string())?;
            print_report(&report);
            Ok(())
        }
        Command::TransferCompare {
            common,
            shared,
            world,
            episodes,
        } => {
            let shared = load_model(&shared)?;
            let world = resolve_world(&world)?;
            let stage = StagePlan {
                config: world_config(&world.name),
                world,
            };
            let comparison =
                run_transfer_comparison(&shared, &stage, &common.seed, episodes, &common.out)
                    .map_err(|e| e.to_string())?;
            print_report(&comparison.report);
            Ok(())
        }
        Command::Serve {
            bind,
            model_dir,
            fusion_every,
            seed,
            fusion_samples,
        } => {
            let mut fc = FusionConfig::default();
            fc.sample_count = fusion_samples;
            let world = builtin_world("env-1").expect("builtin world");
            let registry = nav_registry(Some(&model_dir), seed, world.diagonal(), fc)
                .map_err(|e| e.to_string())?;
            let handle = fednav::cloud::serve(
                &bind,
                Arc::new(registry),
                FusionPolicy::EveryNUploads(fusion_every),
            )
            .map_err(|e| e.to_string())?;
            println!(
                "serving on {} (generation {}), ctrl-c to stop",
                handle.addr,
                handle.registry().generation()
            );
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        Command::Fuse {
            models,
            out,
            world,
            samples,
            seed,
        } => {
            let world = resolve_world(&world)?;
            let actors: Vec<NetworkParameters> =
                models.iter().map(|p| load_model(p)).collect::<Result<_, _>>()?;
            let set = ActorSet::new(actors).map_err(|e| e.to_string())?;
            let mut config = FusionConfig::default();
            config.sample_count = samples;
            config.sample_seed = config.sample_seed.wrapping_add(seed);
            config.holdout_seed = config.holdout_seed.wrapping_add(seed);
            config.init_seed = config.init_seed.wrapping_add(seed);
            let layout = InputLayout::lidar_nav(world.diagonal());
            let (params, report) =
                fusion::fuse(&set, &layout, &config).map_err(|e| e.to_string())?;
            save_model(&out, &params)?;
            println!(
                "fused {} actors -> {} (checksum {}, holdout mse {:.3}, argmax agreement {:.3})",
                set.len(),
                out.display(),
                model_checksum(&params),
                report.holdout_mse,
                report.argmax_agreement
            );
            Ok(())
        }
        Command::Plot { csv, out } => {
            let files = emit_plots(&csv, &out).map_err(|e| e.to_string())?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn print_report(report: &fednav::harness::ComparisonReport) {
    println!(
        "{:<20} {:<12} {:>8} {:>8} {:>8} {:>12} {:>12}",
        "arm", "world", "med_eps", "min", "max", "mean_score", "last5"
    );
    for row in &report.rows {
        println!(
            "{:<20} {:<12} {:>8.1} {:>8.1} {:>8.1} {:>12.1} {:>12.1}",
            row.arm,
            row.stage,
            row.median_episodes,
            row.min_episodes,
            row.max_episodes,
            row.mean_score,
            row.mean_last_five
        );
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
