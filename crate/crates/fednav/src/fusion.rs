//! Knowledge fusion: synthetic-sample labeling by entropy-weighted actor
//! consensus, then distillation of a fresh shared network.
//!
//! Every actor (private models plus the current shared model) scores each
//! synthetic observation. Per sample, each actor gets a confidence from the
//! normalized entropy of its score vector; sharper scorers get larger
//! memory weights, and the label is the weighted sum of the score rows. A
//! new network is then fit to the (sample, label) set by MSE training.

use crate::nn::{self, NetworkParameters, NnError, TrainOptions, TrainingBatch};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Upper bound on learning-rate backoff attempts when distillation
/// diverges or fails to reach a tenth of the all-zeros predictor loss. Halving per retry
/// lands close to the largest stable rate, which matters for fit quality
/// within a fixed epoch budget.
pub const MAX_DISTILL_RETRIES: usize = 10;

/// Actor scores are clamped to this magnitude before labeling; it sits
/// just above the largest attainable episode return. Values beyond it
/// carry no ranking information, and without the clamp an actor's extreme
/// extrapolations on synthetic off-distribution samples make the label
/// function too jagged to distill. Clamping also flattens such rows, so
/// their raised entropy shifts fusion weight toward actors whose scores
/// stay in the plausible range.
pub const SCORE_CLAMP: f64 = 300.0;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("actor set is empty")]
    NoActors,
    #[error("actor {index} output dim {got} differs from {expected}")]
    ActorOutputDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("actor {index} input dim {got} differs from {expected}")]
    ActorInputDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("distillation failed: {0}")]
    Distillation(#[from] NnError),
}

/// Per-feature sampling ranges for synthetic observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputLayout {
    /// Inclusive-exclusive (min, max) per feature.
    pub ranges: Vec<(f64, f64)>,
}

impl InputLayout {
    /// Layout of the raw lidar navigation observation: 10 ranges in
    /// [0.13, 4.0], goal distance in [0, world diagonal], bearing in
    /// (-pi, pi].
    pub fn lidar_nav(world_diagonal: f64) -> Self {
        let mut ranges = vec![(crate::env::LIDAR_MIN, crate::env::LIDAR_MAX); 10];
        ranges.push((0.0, world_diagonal));
        ranges.push((-std::f64::consts::PI, std::f64::consts::PI));
        Self { ranges }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }
}

/// Private models plus the current shared model; hidden layers may differ
/// but input/output dims must match for scoring.
#[derive(Debug, Clone)]
pub struct ActorSet {
    actors: Vec<NetworkParameters>,
}

impl ActorSet {
    pub fn new(actors: Vec<NetworkParameters>) -> Result<Self, FusionError> {
        let first = actors.first().ok_or(FusionError::NoActors)?;
        let (input_dim, output_dim) = (first.input_dim(), first.output_dim());
        for (index, a) in actors.iter().enumerate() {
            if a.output_dim() != output_dim {
                return Err(FusionError::ActorOutputDim {
                    index,
                    expected: output_dim,
                    got: a.output_dim(),
                });
            }
            if a.input_dim() != input_dim {
                return Err(FusionError::ActorInputDim {
                    index,
                    expected: input_dim,
                    got: a.input_dim(),
                });
            }
        }
        Ok(Self { actors })
    }

    pub fn actors(&self) -> &[NetworkParameters] {
        &self.actors
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.actors[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.actors[0].output_dim()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Number of synthetic samples to label.
    pub sample_count: usize,
    pub sample_seed: u64,
    /// Disjoint seed for the held-out fidelity set; never trained on.
    pub holdout_seed: u64,
    pub holdout_count: usize,
    /// Hidden layer sizes of the distilled network.
    pub hidden_dims: Vec<usize>,
    pub init_seed: u64,
    pub train: TrainOptions,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            sample_count: 50_000,
            sample_seed: 17,
            holdout_seed: 9_001,
            holdout_count: 1_000,
            hidden_dims: vec![64, 64],
            init_seed: 23,
            train: TrainOptions {
                epochs: 800,
                learning_rate: 2e-3,
                batch_size: 64,
                stop_loss: Some(0.25),
                shuffle_seed: 31,
            },
        }
    }
}

impl FusionConfig {
    /// Smaller sample budget for quick runs; same labeling semantics.
    pub fn quick() -> Self {
        Self {
            sample_count: 5_000,
            ..Self::default()
        }
    }
}

/// Fusion job summary written beside the output model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionReport {
    pub format_version: u32,
    pub generation: Option<u32>,
    pub n_actors: usize,
    pub sample_count: usize,
    /// Final distillation training MSE (mean per output element).
    pub label_mse: f64,
    /// Held-out MSE between the distilled network and fresh labels.
    pub holdout_mse: f64,
    /// Fraction of held-out samples where the distilled network's argmax
    /// matches the label argmax.
    pub argmax_agreement: f64,
    pub sample_seed: u64,
    pub holdout_seed: u64,
    pub init_seed: u64,
}

/// Draws `count` synthetic inputs, each feature uniform over its declared
/// range. Deterministic per seed.
pub fn generate_samples(count: usize, seed: u64, layout: &InputLayout) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            layout
                .ranges
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..hi))
                .collect()
        })
        .collect()
}

/// Normalized-entropy confidence of one actor's score vector, in [0, 1].
///
/// Scores are ratio-normalized to a probability vector; 1 means a uniform
/// (maximally uncertain) scorer, 0 a one-hot (fully certain) one. Rows
/// containing negatives are shifted positive first; constant rows count as
/// uniform. The shift offset scales with the row's spread so the value is
/// invariant under positive scaling.
pub fn confidence(scores: &[f64]) -> f64 {
    let m = scores.len();
    debug_assert!(m >= 2, "confidence needs at least two actions");
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min == 0.0 {
        return 1.0;
    }
    let shift = if min < 0.0 { -min + 1e-6 * (max - min) } else { 0.0 };
    let total: f64 = scores.iter().map(|s| s + shift).sum();
    let ln_m = (m as f64).ln();
    let mut entropy = 0.0;
    for s in scores {
        let p = (s + shift) / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    (entropy / ln_m).clamp(0.0, 1.0)
}

/// Memory weights from per-actor confidences: `w_j = (1 - c_j) / Σ (1 - c)`.
/// All-uncertain actor sets fall back to uniform weights.
pub fn memory_weights(confidences: &[f64]) -> Vec<f64> {
    let n = confidences.len();
    let total: f64 = confidences.iter().map(|c| 1.0 - c).sum();
    if total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    confidences.iter().map(|c| (1.0 - c) / total).collect()
}

/// Per-sample label: confidence-weighted sum of the actors' score rows.
pub fn fuse_labels(score_rows: &[Vec<f64>]) -> Vec<f64> {
    debug_assert!(!score_rows.is_empty());
    let m = score_rows[0].len();
    let confidences: Vec<f64> = score_rows.iter().map(|r| confidence(r)).collect();
    let weights = memory_weights(&confidences);
    let mut label = vec![0.0; m];
    for (row, w) in score_rows.iter().zip(&weights) {
        for (l, s) in label.iter_mut().zip(row) {
            *l += w * s;
        }
    }
    label
}

/// Scores every actor on every sample and synthesizes per-sample labels.
/// Scores are clamped to `SCORE_CLAMP` before labeling. Sample scoring
/// runs on parallel read-only workers; output order matches the input
/// order, so the result is deterministic.
pub fn label_samples(actors: &ActorSet, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    samples
        .par_iter()
        .map(|x| {
            let rows: Vec<Vec<f64>> = actors
                .actors()
                .iter()
                .map(|a| {
                    let mut row = a.forward(x).expect("actor dims validated");
                    for v in row.iter_mut() {
                        *v = v.clamp(-SCORE_CLAMP, SCORE_CLAMP);
                    }
                    row
                })
                .collect();
            fuse_labels(&rows)
        })
        .collect()
}

/// Runs the full fusion pipeline: sample, score, weight, label, distill.
/// Returns the new shared network and its job report.
pub fn fuse(
    actors: &ActorSet,
    layout: &InputLayout,
    config: &FusionConfig,
) -> Result<(NetworkParameters, FusionReport), FusionError> {
    if config.sample_count == 0 {
        return Err(FusionError::NoSamples);
    }
    let samples = generate_samples(config.sample_count, config.sample_seed, layout);
    let labels = label_samples(actors, &samples);
    let batch = TrainingBatch::new(samples, labels)?;

    let mut dims = vec![actors.input_dim()];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(actors.output_dim());
    let fresh = NetworkParameters::init_random(&dims, config.init_seed)?;

    // Plain SGD stalls or diverges when the configured learning rate sits
    // past the stability bound for this particular label set, and a bad
    // fit that stays finite would otherwise pass silently and poison
    // every later generation. Demand at least a tenth of the all-zeros
    // predictor's loss; otherwise retry from the same init with a reduced
    // rate. The floor keeps near-zero label sets from retrying forever.
    let trivial_mse = batch
        .targets
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        / (batch.targets.len() * actors.output_dim()) as f64;
    let acceptable = (0.1 * trivial_mse).max(1.0);
    let mut train = config.train.clone();
    let mut outcome = nn::train_mse(&fresh, &batch, &train);
    for _ in 0..MAX_DISTILL_RETRIES {
        match &outcome {
            Ok((_, loss)) if loss.is_finite() && *loss <= acceptable => break,
            Ok(_) | Err(NnError::Diverged { .. }) => {
                train.learning_rate /= 2.0;
                outcome = nn::train_mse(&fresh, &batch, &train);
            }
            Err(_) => break,
        }
    }
    let (distilled, label_mse) = outcome?;

    let holdout = generate_samples(config.holdout_count, config.holdout_seed, layout);
    let holdout_labels = label_samples(actors, &holdout);
    let mut holdout_mse = 0.0;
    let mut agree = 0usize;
    for (x, label) in holdout.iter().zip(&holdout_labels) {
        let out = distilled.forward(x)?;
        for (h, t) in out.iter().zip(label) {
            holdout_mse += (h - t) * (h - t);
        }
        if argmax(&out) == argmax(label) {
            agree += 1;
        }
    }
    holdout_mse /= (holdout.len() * actors.output_dim()) as f64;
    let report = FusionReport {
        format_version: REPORT_FORMAT_VERSION,
        generation: None,
        n_actors: actors.len(),
        sample_count: config.sample_count,
        label_mse,
        holdout_mse,
        argmax_agreement: agree as f64 / holdout.len() as f64,
        sample_seed: config.sample_seed,
        holdout_seed: config.holdout_seed,
        init_seed: config.init_seed,
    };
    Ok((distilled, report))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
