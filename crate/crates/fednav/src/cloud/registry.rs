//! Shared-model generation store plus the pending-upload queue and fusion
//! trigger. Downloads are wait-free snapshots; fusion installs are
//! serialized writes.

use super::format::encode_model;
use super::CloudError;
use crate::fusion::{self, ActorSet, FusionConfig, FusionReport, InputLayout};
use crate::nn::NetworkParameters;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

/// A generation-tagged shared model.
#[derive(Debug, Clone)]
pub struct SharedModelRecord {
    pub generation: u32,
    pub params: NetworkParameters,
    pub report: Option<FusionReport>,
}

#[derive(Debug, Clone)]
pub struct PendingUpload {
    pub upload_id: String,
    pub robot_id: String,
    pub env_tag: String,
    pub params: NetworkParameters,
}

/// When the server fuses: after every N uploads, on a fixed timer, or only
/// when asked explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionPolicy {
    EveryNUploads(usize),
    EverySeconds(f64),
    Manual,
}

struct RegistryState {
    records: Vec<Arc<SharedModelRecord>>,
    pending: Vec<PendingUpload>,
    next_upload: u64,
    fusing: bool,
}

pub struct Registry {
    state: RwLock<RegistryState>,
    model_dir: Option<PathBuf>,
    layout: InputLayout,
    fusion_config: FusionConfig,
}

impl Registry {
    /// Opens a registry. If `model_dir` holds `shared-gen-*.model` files
    /// they are re-read; otherwise generation 0 is random-initialized from
    /// `seed` and persisted.
    pub fn open(
        model_dir: Option<&Path>,
        layer_dims: &[usize],
        seed: u64,
        layout: InputLayout,
        fusion_config: FusionConfig,
    ) -> Result<Self, CloudError> {
        let mut records = Vec::new();
        if let Some(dir) = model_dir {
            std::fs::create_dir_all(dir)?;
            let mut found: Vec<(u32, PathBuf)> = Vec::new();
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if let Some(g) = name
                    .strip_prefix("shared-gen-")
                    .and_then(|s| s.strip_suffix(".model"))
                    .and_then(|s| s.parse::<u32>().ok())
                {
                    found.push((g, path));
                }
            }
            found.sort_by_key(|(g, _)| *g);
            for (generation, path) in found {
                let text = std::fs::read_to_string(&path)?;
                let params = super::format::decode_model(text.trim())?;
                records.push(Arc::new(SharedModelRecord {
                    generation,
                    params,
                    report: None,
                }));
            }
        }
        if records.is_empty() {
            let params = NetworkParameters::init_random(layer_dims, seed)
                .map_err(|e| CloudError::Format(e.to_string()))?;
            let record = Arc::new(SharedModelRecord {
                generation: 0,
                params,
                report: None,
            });
            if let Some(dir) = model_dir {
                persist(dir, &record)?;
            }
            records.push(record);
        }
        Ok(Self {
            state: RwLock::new(RegistryState {
                records,
                pending: Vec::new(),
                next_upload: 0,
                fusing: false,
            }),
            model_dir: model_dir.map(Path::to_path_buf),
            layout,
            fusion_config,
        })
    }

    /// Latest shared model; a cheap snapshot that never observes a torn
    /// install.
    pub fn current(&self) -> Arc<SharedModelRecord> {
        let state = self.state.read().unwrap();
        state.records.last().expect("generation 0 always present").clone()
    }

    pub fn generation(&self) -> u32 {
        self.current().generation
    }

    pub fn record(&self, generation: u32) -> Option<Arc<SharedModelRecord>> {
        let state = self.state.read().unwrap();
        state
            .records
            .iter()
            .find(|r| r.generation == generation)
            .cloned()
    }

    /// Queues a private model; returns its upload id. Arrival order is
    /// preserved.
    pub fn enqueue_upload(
        &self,
        params: NetworkParameters,
        robot_id: &str,
        env_tag: &str,
    ) -> String {
        let mut state = self.state.write().unwrap();
        let upload_id = format!("u{}", state.next_upload);
        state.next_upload += 1;
        state.pending.push(PendingUpload {
            upload_id: upload_id.clone(),
            robot_id: robot_id.to_string(),
            env_tag: env_tag.to_string(),
            params,
        });
        upload_id
    }

    pub fn pending_len(&self) -> usize {
        self.state.read().unwrap().pending.len()
    }

    pub fn pending_snapshot(&self) -> Vec<PendingUpload> {
        self.state.read().unwrap().pending.clone()
    }

    /// Fuses the pending uploads with the current shared model and installs
    /// the result as the next generation. The queue is consumed exactly
    /// once on success and retained on failure. One job runs at a time;
    /// uploads arriving during fusion join the next batch.
    pub fn trigger_fusion(&self) -> Result<u32, CloudError> {
        let (batch, current) = {
            let mut state = self.state.write().unwrap();
            if state.fusing {
                return Err(CloudError::FusionInProgress);
            }
            if state.pending.is_empty() {
                return Err(CloudError::NoPendingUploads);
            }
            state.fusing = true;
            let batch = std::mem::take(&mut state.pending);
            let current = state.records.last().unwrap().clone();
            (batch, current)
        };

        let result = self.run_fusion(&batch, &current);
        let mut state = self.state.write().unwrap();
        state.fusing = false;
        match result {
            Ok(record) => {
                let generation = record.generation;
                let record = Arc::new(record);
                if let Some(dir) = &self.model_dir {
                    persist(dir, &record)?;
                }
                state.records.push(record);
                Ok(generation)
            }
            Err(e) => {
                // Put the batch back at the front, preserving order.
                let mut restored = batch;
                restored.append(&mut state.pending);
                state.pending = restored;
                Err(e)
            }
        }
    }

    fn run_fusion(
        &self,
        batch: &[PendingUpload],
        current: &SharedModelRecord,
    ) -> Result<SharedModelRecord, CloudError> {
        for upload in batch {
            if upload.params.input_dim() != self.layout.dim() {
                return Err(CloudError::Format(format!(
                    "upload {} has input dim {}, registry expects {}",
                    upload.upload_id,
                    upload.params.input_dim(),
                    self.layout.dim()
                )));
            }
        }
        let mut actors: Vec<NetworkParameters> =
            batch.iter().map(|u| u.params.clone()).collect();
        // The shared model takes part in fusion as one more actor so old
        // knowledge carries forward, except at generation zero where it is
        // still a random initialization with nothing to contribute.
        if current.generation > 0 {
            actors.push(current.params.clone());
        }
        let actor_set = ActorSet::new(actors)?;
        let generation = current.generation + 1;
        // Vary the per-generation seeds deterministically so successive
        // fusions do not reuse the same synthetic samples.
        let mut config = self.fusion_config.clone();
        config.sample_seed = config.sample_seed.wrapping_add(generation as u64);
        config.holdout_seed = config.holdout_seed.wrapping_add(generation as u64);
        config.init_seed = config.init_seed.wrapping_add(generation as u64);
        let (params, mut report) = fusion::fuse(&actor_set, &self.layout, &config)?;
        report.generation = Some(generation);
        Ok(SharedModelRecord {
            generation,
            params,
            report: Some(report),
        })
    }
}

fn persist(dir: &Path, record: &SharedModelRecord) -> Result<(), CloudError> {
    let model_path = dir.join(format!("shared-gen-{}.model", record.generation));
    std::fs::write(&model_path, encode_model(&record.params) + "\n")?;
    if let Some(report) = &record.report {
        let report_path = dir.join(format!("shared-gen-{}.report.json", record.generation));
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        std::fs::write(&report_path, text + "\n")?;
    }
    Ok(())
}

/// Convenience constructor for the in-process lidar-navigation registry.
pub fn nav_registry(
    model_dir: Option<&Path>,
    seed: u64,
    world_diagonal: f64,
    fusion_config: FusionConfig,
) -> Result<Registry, CloudError> {
    Registry::open(
        model_dir,
        &[crate::env::OBS_DIM, 64, 64, crate::env::ACTION_COUNT],
        seed,
        InputLayout::lidar_nav(world_diagonal),
        fusion_config,
    )
}
