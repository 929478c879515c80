//! Experiment orchestration: the lifelong curriculum over the shipped
//! worlds, the scratch-vs-transfer comparisons, generalization runs over
//! the held-out test worlds, and CSV/plot-data emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    self, episodes_to_threshold, read_episode_csv, write_episode_csv, DqnConfig, EpisodeLog,
    InitMode,
};
use crate::cloud::{CloudClient, CloudError, Registry};
use crate::env::{load_world, EnvError, WorldSpec};
use crate::nn::NetworkParameters;
use crate::transfer::TransferMode;

pub const PLAN_FORMAT_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Episode-bin width for the stacked share-of-positive-scores output.
pub const STACK_BIN: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Agent(#[from] agent::AgentError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("data format error: {0}")]
    Format(String),
}

const BUILTIN_WORLDS: &[(&str, &str)] = &[
    ("env-1", include_str!("../../worlds/env-1.json")),
    ("env-2", include_str!("../../worlds/env-2.json")),
    ("env-3", include_str!("../../worlds/env-3.json")),
    ("env-4", include_str!("../../worlds/env-4.json")),
    ("test-env-1", include_str!("../../worlds/test-env-1.json")),
    ("test-env-2", include_str!("../../worlds/test-env-2.json")),
    ("test-env-3", include_str!("../../worlds/test-env-3.json")),
];

/// Loads one of the worlds shipped with the crate by name.
pub fn builtin_world(name: &str) -> Result<WorldSpec, HarnessError> {
    let text = BUILTIN_WORLDS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| HarnessError::Plan(format!("unknown world {name:?}")))?;
    Ok(load_world(text)?)
}

pub fn curriculum_world_names() -> &'static [&'static str] {
    &["env-1", "env-2", "env-3", "env-4"]
}

pub fn test_world_names() -> &'static [&'static str] {
    &["test-env-1", "test-env-2", "test-env-3"]
}

/// Training settings frozen per world during bring-up. The empty room
/// supports a stricter stop rule than the obstacle worlds, where an
/// occasional collision keeps single episode scores below 200 even for
/// good policies.
pub fn world_config(world_name: &str) -> DqnConfig {
    let mut config = DqnConfig::default();
    if world_name != "env-1" {
        config.score_threshold = 150.0;
        config.stop_window = 10;
    }
    config
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagePlan {
    pub world: WorldSpec,
    pub config: DqnConfig,
}

/// A full lifelong run: ordered stages, the transfer mode used to seed
/// each stage from the shared model, and explicit seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub format_version: u32,
    pub stages: Vec<StagePlan>,
    pub transfer_mode: TransferMode,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    /// The default curriculum over the shipped worlds.
    pub fn curriculum(seeds: &[u64]) -> Self {
        let stages = curriculum_world_names()
            .iter()
            .map(|name| StagePlan {
                world: builtin_world(name).expect("builtin world"),
                config: world_config(name),
            })
            .collect();
        Self {
            format_version: PLAN_FORMAT_VERSION,
            stages,
            transfer_mode: TransferMode::WarmStart,
            seeds: seeds.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.format_version != PLAN_FORMAT_VERSION {
            return Err(HarnessError::Plan(format!(
                "unsupported plan format_version {}",
                self.format_version
            )));
        }
        if self.stages.is_empty() {
            return Err(HarnessError::Plan("plan has no stages".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Plan("plan has no seeds".into()));
        }
        if self.transfer_mode == TransferMode::FeatureExtractor {
            return Err(HarnessError::Plan(
                "feature-extractor agents widen the network input, so their \
                 private models cannot join fusion; use warm-start for the \
                 lifelong curriculum"
                    .into(),
            ));
        }
        for stage in &self.stages {
            stage.world.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = serde_json::from_str(text)
            .map_err(|e| HarnessError::Plan(format!("bad plan file: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Where the shared model lives for a run.
pub enum CloudAccess {
    /// Registry in the same process; fusion is triggered directly.
    InProcess(Arc<Registry>),
    /// TCP server address; fusion is the server's job, the client polls
    /// for the next generation after its upload.
    Tcp(String),
}

impl CloudAccess {
    pub fn download(&self, robot_id: &str) -> Result<(u32, NetworkParameters), HarnessError> {
        match self {
            CloudAccess::InProcess(reg) => {
                let record = reg.current();
                Ok((record.generation, record.params.clone()))
            }
            CloudAccess::Tcp(addr) => Ok(crate::cloud::client::download(addr, robot_id)?),
        }
    }

    /// Uploads a private model and waits until the fused generation that
    /// includes it is available.
    pub fn upload_and_fuse(
        &self,
        params: &NetworkParameters,
        robot_id: &str,
        env_tag: &str,
    ) -> Result<u32, HarnessError> {
        match self {
            CloudAccess::InProcess(reg) => {
                reg.enqueue_upload(params.clone(), robot_id, env_tag);
                Ok(reg.trigger_fusion()?)
            }
            CloudAccess::Tcp(addr) => {
                let mut client = CloudClient::connect(addr, robot_id)?;
                let (before, _) = client.download_shared()?;
                client.upload_private(params, env_tag)?;
                let deadline = std::time::Instant::now() + std::time::Duration::from_secs(600);
                loop {
                    let (gen, _) = client.download_shared()?;
                    if gen > before {
                        return Ok(gen);
                    }
                    if std::time::Instant::now() > deadline {
                        return Err(HarnessError::Cloud(CloudError::Protocol(
                            "timed out waiting for fusion".into(),
                        )));
                    }
                    std::thread::sleep(std::time::Duration::from_millis(50));
                }
            }
        }
    }
}

/// Per-(arm, stage) summary, aggregated over seeds. Everything here is
/// recomputable from the emitted CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub arm: String,
    pub stage: String,
    /// Episodes until the stop rule fires, one entry per seed;
    /// `None` marks a non-converged run.
    pub episodes_to_threshold: Vec<Option<usize>>,
    /// Median over seeds, counting non-converged runs at the episode cap.
    pub median_episodes: f64,
    pub min_episodes: f64,
    pub max_episodes: f64,
    pub mean_score: f64,
    pub mean_last_five: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn row(&self, arm: &str, stage: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.arm == arm && r.stage == stage)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Builds one report row from per-seed episode logs. Non-converged seeds
/// enter the episode statistics at `cap`.
pub fn summarize_arm(
    arm: &str,
    stage: &str,
    per_seed_logs: &[Vec<EpisodeLog>],
    threshold: f64,
    window: usize,
    cap: usize,
) -> ReportRow {
    let episodes: Vec<Option<usize>> = per_seed_logs
        .iter()
        .map(|logs| episodes_to_threshold(logs, threshold, window))
        .collect();
    let mut counts: Vec<f64> = episodes
        .iter()
        .map(|e| e.unwrap_or(cap) as f64)
        .collect();
    let median_episodes = median(&mut counts);
    let min_episodes = counts.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_episodes = counts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut score_sum = 0.0;
    let mut score_n = 0usize;
    let mut last_five_sum = 0.0;
    let mut last_five_n = 0usize;
    for logs in per_seed_logs {
        for log in logs {
            score_sum += log.score;
            score_n += 1;
        }
        for log in logs.iter().rev().take(5) {
            last_five_sum += log.score;
            last_five_n += 1;
        }
    }
    ReportRow {
        arm: arm.to_string(),
        stage: stage.to_string(),
        episodes_to_threshold: episodes,
        median_episodes,
        min_episodes,
        max_episodes,
        mean_score: score_sum / score_n.max(1) as f64,
        mean_last_five: last_five_sum / last_five_n.max(1) as f64,
    }
}

fn write_csv(path: &Path, logs: &[EpisodeLog]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    write_episode_csv(&mut buf, logs)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Environment seed schedule shared by all arms of one (stage, seed)
/// cell, so score differences are attributable to the initialization.
pub fn paired_env_base(stage_index: usize, seed: u64) -> u64 {
    1_000_000 + seed * 100_000 + stage_index as u64 * 10_000
}

/// Exploration schedule for warm-started agents. A warm start carries a
/// usable policy, so restarting epsilon at 1.0 would spend a hundred
/// episodes acting randomly and erase the head start; a short, shallow
/// schedule keeps enough exploration to adapt to the new obstacles.
pub const WARM_EPSILON_START: f64 = 0.3;

/// Exploration start for candidate-ranking (generalization) runs. These
/// runs fine-tune already-competent models to compare them, and heavy
/// exploration would erase the zero-shot differences being measured.
pub const RANKING_EPSILON_START: f64 = 0.1;
pub const WARM_EPSILON_DECAY_EPISODES: usize = 60;

pub fn warm_config(base: &DqnConfig) -> DqnConfig {
    let mut config = base.clone();
    config.epsilon_start = WARM_EPSILON_START;
    config.epsilon_decay_episodes = WARM_EPSILON_DECAY_EPISODES;
    config
}

pub struct LifelongOutcome {
    pub report: ComparisonReport,
    /// Final shared model per seed, keyed by seed.
    pub shared_by_seed: BTreeMap<u64, NetworkParameters>,
    /// Final scratch model per (seed, stage index).
    pub scratch_models: BTreeMap<(u64, usize), NetworkParameters>,
}

/// Runs the lifelong curriculum plus a paired from-scratch arm.
///
/// Each seed walks the full curriculum against its own cloud: stage g
/// downloads the shared model, trains (fresh at generation zero, via the
/// plan's transfer mode afterwards), uploads, and waits for fusion. The
/// scratch arm retrains fresh in the same environments with the same
/// episode seed schedule.
pub fn run_lifelong<F>(
    plan: &ExperimentPlan,
    out_dir: &Path,
    mut cloud_for_seed: F,
) -> Result<LifelongOutcome, HarnessError>
where
    F: FnMut(u64) -> Result<CloudAccess, HarnessError>,
{
    plan.validate()?;
    let mut lfrl_logs: Vec<Vec<Vec<EpisodeLog>>> = vec![Vec::new(); plan.stages.len()];
    let mut scratch_logs: Vec<Vec<Vec<EpisodeLog>>> = vec![Vec::new(); plan.stages.len()];
    let mut shared_by_seed = BTreeMap::new();
    let mut scratch_models = BTreeMap::new();

    for &seed in &plan.seeds {
        let cloud = cloud_for_seed(seed)?;
        let robot_id = format!("robot-{seed}");
        for (g, stage) in plan.stages.iter().enumerate() {
            let mut config = stage.config.clone();
            config.seed = seed;
            config.env_seed_base = paired_env_base(g, seed);

            let (generation, shared) = cloud.download(&robot_id)?;
            let (init, stage_config) = if generation == 0 {
                (InitMode::Fresh { seed }, config.clone())
            } else {
                match plan.transfer_mode {
                    TransferMode::None => (InitMode::Fresh { seed }, config.clone()),
                    TransferMode::WarmStart => {
                        (InitMode::WarmStart(shared), warm_config(&config))
                    }
                    TransferMode::FeatureExtractor => unreachable!("rejected by validate"),
                }
            };
            let lfrl = agent::train(&stage.world, &stage_config, init)?;
            write_csv(
                &out_dir
                    .join(format!("seed-{seed}"))
                    .join(format!("stage-{}-lfrl.csv", g + 1)),
                &lfrl.logs,
            )?;
            cloud.upload_and_fuse(&lfrl.params, &robot_id, &stage.world.name)?;

            let scratch = agent::train(&stage.world, &config, InitMode::Fresh { seed })?;
            write_csv(
                &out_dir
                    .join(format!("seed-{seed}"))
                    .join(format!("stage-{}-scratch.csv", g + 1)),
                &scratch.logs,
            )?;

            lfrl_logs[g].push(lfrl.logs);
            scratch_logs[g].push(scratch.logs.clone());
            scratch_models.insert((seed, g), scratch.params);
        }
        let (generation, shared) = cloud.download(&robot_id)?;
        debug_assert_eq!(generation as usize, plan.stages.len());
        shared_by_seed.insert(seed, shared);
    }

    let mut rows = Vec::new();
    for (g, stage) in plan.stages.iter().enumerate() {
        let name = &stage.world.name;
        let c = &stage.config;
        rows.push(summarize_arm(
            "lfrl",
            name,
            &lfrl_logs[g],
            c.score_threshold,
            c.stop_window,
            c.max_episodes,
        ));
        rows.push(summarize_arm(
            "scratch",
            name,
            &scratch_logs[g],
            c.score_threshold,
            c.stop_window,
            c.max_episodes,
        ));
    }
    let report = ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        rows,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json() + "\n")?;
    Ok(LifelongOutcome {
        report,
        shared_by_seed,
        scratch_models,
    })
}

/// Warm-starts every candidate model in every test world and reports the
/// episodes-to-threshold / score triplet per (model, world) cell. All
/// models see identical episode seed schedules within a cell and train
/// for the same fixed episode budget (no early stop), so closing scores
/// compare at a common horizon; episodes-to-threshold is recomputed from
/// the logs afterwards.
pub fn run_generalization(
    candidates: &[(String, NetworkParameters)],
    test_stages: &[StagePlan],
    seeds: &[u64],
    episodes: usize,
    out_dir: &Path,
) -> Result<ComparisonReport, HarnessError> {
    if candidates.is_empty() || test_stages.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Plan(
            "generalization needs candidates, test worlds and seeds".into(),
        ));
    }
    let mut rows = Vec::new();
    for (e, stage) in test_stages.iter().enumerate() {
        for (name, params) in candidates {
            let mut per_seed = Vec::new();
            for &seed in seeds {
                let mut config = warm_config(&stage.config);
                config.epsilon_start = RANKING_EPSILON_START;
                config.seed = seed;
                config.env_seed_base = paired_env_base(e, seed);
                config.max_episodes = episodes;
                config.score_threshold = f64::INFINITY;
                let out =
                    agent::train(&stage.world, &config, InitMode::WarmStart(params.clone()))?;
                write_csv(
                    &out_dir.join(format!("{}-{}-seed-{seed}.csv", name, stage.world.name)),
                    &out.logs,
                )?;
                per_seed.push(out.logs);
            }
            rows.push(summarize_arm(
                name,
                &stage.world.name,
                &per_seed,
                stage.config.score_threshold,
                stage.config.stop_window,
                episodes,
            ));
        }
    }
    let report = ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        rows,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json() + "\n")?;
    Ok(report)
}

pub struct TransferComparison {
    pub report: ComparisonReport,
    /// Per-arm, per-seed logs in seed order, keyed by arm name.
    pub logs: BTreeMap<String, Vec<Vec<EpisodeLog>>>,
}

/// Trains scratch, warm-start and feature-extractor arms for a fixed
/// episode budget (no early stop), so the per-episode axes align across
/// arms; episodes-to-threshold is recomputed from the logs afterwards.
pub fn run_transfer_comparison(
    shared: &NetworkParameters,
    stage: &StagePlan,
    seeds: &[u64],
    episodes: usize,
    out_dir: &Path,
) -> Result<TransferComparison, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Plan("transfer comparison needs seeds".into()));
    }
    let arms: [(&str, fn(&NetworkParameters, u64) -> InitMode); 3] = [
        ("scratch", |_, seed| InitMode::Fresh { seed }),
        ("warm-start", |shared, _| InitMode::WarmStart(shared.clone())),
        ("feature-extractor", |shared, seed| InitMode::FeatureExtractor {
            shared: shared.clone(),
            seed,
        }),
    ];
    let mut logs: BTreeMap<String, Vec<Vec<EpisodeLog>>> = BTreeMap::new();
    for (arm, init_fn) in &arms {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut config = if *arm == "warm-start" {
                warm_config(&stage.config)
            } else {
                stage.config.clone()
            };
            config.seed = seed;
            config.env_seed_base = paired_env_base(0, seed);
            config.max_episodes = episodes;
            config.score_threshold = f64::INFINITY;
            let out = agent::train(&stage.world, &config, init_fn(shared, seed))?;
            write_csv(&out_dir.join(format!("{arm}-seed-{seed}.csv")), &out.logs)?;
            per_seed.push(out.logs);
        }
        logs.insert(arm.to_string(), per_seed);
    }
    let rows = arms
        .iter()
        .map(|(arm, _)| {
            summarize_arm(
                arm,
                &stage.world.name,
                &logs[*arm],
                stage.config.score_threshold,
                stage.config.stop_window,
                episodes,
            )
        })
        .collect();
    let report = ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        rows,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json() + "\n")?;
    Ok(TransferComparison { report, logs })
}

/// Mean over episode indices of the score standard deviation across
/// seeds. Arms must have equal episode counts per seed (fixed budget).
pub fn inter_seed_score_std(per_seed_logs: &[Vec<EpisodeLog>]) -> f64 {
    let seeds = per_seed_logs.len();
    if seeds < 2 {
        return 0.0;
    }
    let episodes = per_seed_logs.iter().map(|l| l.len()).min().unwrap_or(0);
    if episodes == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for e in 0..episodes {
        let scores: Vec<f64> = per_seed_logs.iter().map(|l| l[e].score).collect();
        let mean = scores.iter().sum::<f64>() / seeds as f64;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
        total += var.sqrt();
    }
    total / episodes as f64
}

/// Converts every episode CSV in `csv_dir` to a gnuplot-ready
/// whitespace-separated `.dat` series, plus one stacked file binning the
/// positive scores of every arm per `STACK_BIN` episodes.
pub fn emit_plots(csv_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(csv_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(HarnessError::Format(format!(
            "no episode CSVs in {}",
            csv_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut series = Vec::new();
    for path in &csvs {
        let text = std::fs::read_to_string(path)?;
        let logs = read_episode_csv(&text).map_err(HarnessError::Format)?;
        if logs.is_empty() {
            return Err(HarnessError::Format(format!(
                "{} has no data rows",
                path.display()
            )));
        }
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let mut out = String::from("# episode score\n");
        for log in &logs {
            out.push_str(&format!("{} {:.4}\n", log.episode, log.score));
        }
        let dat = out_dir.join(format!("{stem}.dat"));
        std::fs::write(&dat, out)?;
        written.push(dat);
        series.push((stem, logs));
    }

    let bins = series
        .iter()
        .map(|(_, logs)| logs.len().div_ceil(STACK_BIN))
        .max()
        .unwrap();
    let mut out = String::from("# bin_start");
    for (name, _) in &series {
        out.push(' ');
        out.push_str(name);
    }
    out.push('\n');
    for bin in 0..bins {
        out.push_str(&format!("{}", bin * STACK_BIN));
        for (_, logs) in &series {
            let sum: f64 = logs
                .iter()
                .skip(bin * STACK_BIN)
                .take(STACK_BIN)
                .map(|l| l.score.max(0.0))
                .sum();
            out.push_str(&format!(" {sum:.4}"));
        }
        out.push('\n');
    }
    let stacked = out_dir.join("stacked.dat");
    std::fs::write(&stacked, out)?;
    written.push(stacked);
    Ok(written)
}
