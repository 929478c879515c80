//! DQN agent: epsilon-greedy exploration over the discrete action set, a
//! FIFO replay buffer, and periodic target-network syncs. Produces the
//! private network that gets uploaded for fusion.

use crate::env::{
    Environment, EnvError, Terminal, WorldSpec, ACTION_COUNT, OBS_DIM, SECONDS_PER_STEP,
    TEST_STEP_CAP,
};
use crate::fusion::argmax;
use crate::nn::{self, NetworkParameters, NnError, TrainingBatch};
use crate::transfer::{self, TransferError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("training diverged (non-finite Q-values) at episode {episode}")]
    Diverged { episode: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Q-learning hyperparameters and the early-stop rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly from start to end.
    pub epsilon_decay_episodes: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Steps between target-network syncs.
    pub target_sync_interval: usize,
    pub learning_rate: f64,
    pub max_episodes: usize,
    pub episode_step_cap: usize,
    /// Early stop fires when the last `stop_window` episode scores all
    /// exceed `score_threshold`.
    pub score_threshold: f64,
    pub stop_window: usize,
    pub hidden_dims: Vec<usize>,
    /// Seed for exploration and replay sampling.
    pub seed: u64,
    /// Episode seeds are `env_seed_base + episode`; arms sharing this base
    /// see identical goal schedules.
    pub env_seed_base: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_decay_episodes: 150,
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync_interval: 1000,
            learning_rate: 3e-3,
            max_episodes: 500,
            episode_step_cap: 300,
            score_threshold: 200.0,
            stop_window: 25,
            hidden_dims: vec![64, 64],
            seed: 0,
            env_seed_base: 1_000_000,
        }
    }
}

impl DqnConfig {
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// One replayable experience step, stored in encoded (network-input) form.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action_index: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

/// Bounded FIFO experience store.
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        (0..count)
            .map(|_| &self.buf[rng.gen_range(0..self.buf.len())])
            .collect()
    }
}

/// Per-episode record behind every curve and comparison metric. The time
/// column is simulated elapsed time (`steps * SECONDS_PER_STEP`), so logs
/// are reproducible across machines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub score: f64,
    pub steps: usize,
    pub outcome: Terminal,
    pub elapsed_s: f64,
}

/// How the agent's network is seeded.
#[derive(Debug, Clone)]
pub enum InitMode {
    Fresh { seed: u64 },
    WarmStart(NetworkParameters),
    /// Frozen shared model used as a feature extractor; the agent's own
    /// network is fresh-initialized with the widened input.
    FeatureExtractor { shared: NetworkParameters, seed: u64 },
}

/// Maps raw observations to network inputs.
#[derive(Debug, Clone)]
pub enum ObservationEncoder {
    Raw,
    FeatureExtractor(NetworkParameters),
}

impl ObservationEncoder {
    pub fn encode(&self, raw: &[f64]) -> Result<Vec<f64>, TransferError> {
        match self {
            Self::Raw => Ok(raw.to_vec()),
            Self::FeatureExtractor(shared) => transfer::augment_observation(shared, raw),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Raw => OBS_DIM,
            Self::FeatureExtractor(shared) => transfer::augmented_dim(shared),
        }
    }
}

/// One Bellman-backup SGD step over a transition batch. Regression target
/// for the taken action is `r + gamma * max_a Q_target(s', a)` (just `r`
/// on terminal transitions); other actions keep their current prediction
/// so they contribute no gradient. All targets are clamped to
/// `Q_TARGET_CLAMP`, which never binds at realistic return magnitudes.
pub fn q_update(
    batch: &[&Transition],
    online: &mut NetworkParameters,
    target: &NetworkParameters,
    gamma: f64,
    lr: f64,
) -> Result<f64, AgentError> {
    assert!(!batch.is_empty(), "q_update needs a non-empty batch");
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let mut y = online.forward(&t.observation)?;
        // Clamp the untouched entries too: they normally regress onto the
        // net's own prediction (zero gradient), but once a prediction
        // escapes the plausible-return range it gets pulled back instead
        // of drifting freely through the shared hidden weights.
        for v in y.iter_mut() {
            *v = v.clamp(-Q_TARGET_CLAMP, Q_TARGET_CLAMP);
        }
        let backup = if t.terminal {
            t.reward
        } else {
            let next_q = target.forward(&t.next_observation)?;
            let max_next = next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * max_next
        };
        if !backup.is_finite() {
            return Err(AgentError::Diverged { episode: 0 });
        }
        y[t.action_index] = backup.clamp(-Q_TARGET_CLAMP, Q_TARGET_CLAMP);
        inputs.push(t.observation.clone());
        targets.push(y);
    }
    let mini = TrainingBatch::new(inputs, targets)?;
    Ok(nn::sgd_step_clipped(online, &mini, lr, Q_GRAD_CLIP)?)
}

/// Global gradient-norm ceiling for Bellman updates; terminal rewards are
/// two orders of magnitude above the shaping signal and unclipped steps
/// destabilize the plain-SGD fit.
pub const Q_GRAD_CLIP: f64 = 10.0;

/// Ceiling on the magnitude of the Bellman regression target. True returns
/// stay within a few hundred (terminal rewards are +-200 plus bounded
/// shaping), so this never binds in healthy training; it only halts the
/// runaway spiral where a policy stuck in repeated collisions bootstraps
/// ever-larger negative values off its own target network.
pub const Q_TARGET_CLAMP: f64 = 1000.0;

/// Greedy action: argmax of the Q-vector, ties to the lowest index.
pub fn greedy_action(net: &NetworkParameters, input: &[f64]) -> Result<usize, NnError> {
    Ok(argmax(&net.forward(input)?))
}

pub struct TrainOutcome {
    pub params: NetworkParameters,
    pub logs: Vec<EpisodeLog>,
    pub early_stopped: bool,
    pub encoder: ObservationEncoder,
}

/// Runs DQN training in the given world until `max_episodes` or the
/// early-stop rule. Deterministic given the config seeds.
pub fn train(spec: &WorldSpec, config: &DqnConfig, init: InitMode) -> Result<TrainOutcome, AgentError> {
    let (mut online, encoder) = match init {
        InitMode::Fresh { seed } => {
            let dims = net_dims(OBS_DIM, &config.hidden_dims);
            (
                NetworkParameters::init_random(&dims, seed)?,
                ObservationEncoder::Raw,
            )
        }
        InitMode::WarmStart(shared) => {
            let dims = net_dims(OBS_DIM, &config.hidden_dims);
            (transfer::warm_start(&shared, &dims)?, ObservationEncoder::Raw)
        }
        InitMode::FeatureExtractor { shared, seed } => {
            let dims = net_dims(transfer::augmented_dim(&shared), &config.hidden_dims);
            transfer::check_feature_extractor_dims(&shared, dims[0])?;
            (
                NetworkParameters::init_random(&dims, seed)?,
                ObservationEncoder::FeatureExtractor(shared),
            )
        }
    };
    let mut target = online.clone();
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x51ed_270b));
    let mut logs: Vec<EpisodeLog> = Vec::new();
    let mut global_step = 0usize;
    let mut early_stopped = false;

    for episode in 0..config.max_episodes {
        let epsilon = config.epsilon(episode);
        let mut env = Environment::reset(
            spec,
            config.env_seed_base.wrapping_add(episode as u64),
            config.episode_step_cap,
        )?;
        let mut obs = encoder.encode(&env.observe().to_vec())?;
        let mut score = 0.0;
        let outcome;
        loop {
            let action = if explore_rng.gen::<f64>() < epsilon {
                explore_rng.gen_range(0..ACTION_COUNT)
            } else {
                let q = online.forward(&obs)?;
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(AgentError::Diverged { episode });
                }
                argmax(&q)
            };
            let result = env.step(action)?;
            let next_obs = encoder.encode(&result.observation.to_vec())?;
            score += result.reward;
            replay.push(Transition {
                observation: obs,
                action_index: action,
                reward: result.reward,
                // Timeout is a cap, not a property of the state; bootstrap
                // through it.
                next_observation: next_obs.clone(),
                terminal: matches!(result.terminal, Terminal::Goal | Terminal::Collision),
            });
            obs = next_obs;
            global_step += 1;

            if replay.len() >= config.batch_size {
                let batch = replay.sample(config.batch_size, &mut sample_rng);
                q_update(&batch, &mut online, &target, config.gamma, config.learning_rate)
                    .map_err(|e| match e {
                        AgentError::Diverged { .. } => AgentError::Diverged { episode },
                        other => other,
                    })?;
            }
            if global_step % config.target_sync_interval == 0 {
                target = online.clone();
            }
            if result.terminal.is_terminal() {
                outcome = result.terminal;
                break;
            }
        }
        logs.push(EpisodeLog {
            episode,
            score,
            steps: env.steps(),
            outcome,
            elapsed_s: env.steps() as f64 * SECONDS_PER_STEP,
        });
        if logs.len() >= config.stop_window
            && logs[logs.len() - config.stop_window..]
                .iter()
                .all(|l| l.score > config.score_threshold)
        {
            early_stopped = true;
            break;
        }
    }
    Ok(TrainOutcome {
        params: online,
        logs,
        early_stopped,
        encoder,
    })
}

fn net_dims(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(ACTION_COUNT);
    dims
}

/// Greedy-rollout aggregates over the episode seeds `0..episodes`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSummary {
    pub goal_rate: f64,
    pub mean_score: f64,
    pub mean_steps: f64,
}

/// Evaluates a network with epsilon = 0 over `episodes` seeded episodes at
/// the testing step cap.
pub fn evaluate(
    params: &NetworkParameters,
    spec: &WorldSpec,
    episodes: usize,
    encoder: &ObservationEncoder,
) -> Result<EvalSummary, AgentError> {
    let mut goals = 0usize;
    let mut total_score = 0.0;
    let mut total_steps = 0usize;
    for seed in 0..episodes as u64 {
        let mut env = Environment::reset(spec, seed, TEST_STEP_CAP)?;
        let mut obs = encoder.encode(&env.observe().to_vec())?;
        loop {
            let action = greedy_action(params, &obs)?;
            let result = env.step(action)?;
            total_score += result.reward;
            obs = encoder.encode(&result.observation.to_vec())?;
            if result.terminal.is_terminal() {
                if result.terminal == Terminal::Goal {
                    goals += 1;
                }
                break;
            }
        }
        total_steps += env.steps();
    }
    Ok(EvalSummary {
        goal_rate: goals as f64 / episodes as f64,
        mean_score: total_score / episodes as f64,
        mean_steps: total_steps as f64 / episodes as f64,
    })
}

/// First 1-based episode count at which `window` consecutive scores exceed
/// `threshold`, if ever.
pub fn episodes_to_threshold(logs: &[EpisodeLog], threshold: f64, window: usize) -> Option<usize> {
    if logs.len() < window {
        return None;
    }
    for end in window..=logs.len() {
        if logs[end - window..end].iter().all(|l| l.score > threshold) {
            return Some(end);
        }
    }
    None
}

/// Writes the per-episode CSV stream: `episode,score,steps,outcome,elapsed_s`.
pub fn write_episode_csv<W: Write>(mut w: W, logs: &[EpisodeLog]) -> std::io::Result<()> {
    writeln!(w, "episode,score,steps,outcome,elapsed_s")?;
    for l in logs {
        writeln!(
            w,
            "{},{:.4},{},{},{:.1}",
            l.episode,
            l.score,
            l.steps,
            l.outcome.as_str(),
            l.elapsed_s
        )?;
    }
    Ok(())
}

/// Parses a CSV previously written by [`write_episode_csv`].
pub fn read_episode_csv(text: &str) -> Result<Vec<EpisodeLog>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header != "episode,score,steps,outcome,elapsed_s" {
        return Err(format!("unexpected CSV header: {header}"));
    }
    let mut logs = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(format!("line {}: expected 5 columns", i + 2));
        }
        let outcome = match parts[3] {
            "none" => Terminal::None,
            "goal" => Terminal::Goal,
            "collision" => Terminal::Collision,
            "timeout" => Terminal::Timeout,
            other => return Err(format!("line {}: unknown outcome {other:?}", i + 2)),
        };
        logs.push(EpisodeLog {
            episode: parts[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            score: parts[1].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            steps: parts[2].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
            outcome,
            elapsed_s: parts[4].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
        });
    }
    Ok(logs)
}
