//! Cloud registry and protocol: stores shared-model generations, accepts
//! private-model uploads over TCP, serves downloads, and triggers fusion
//! at a configurable cadence.

pub mod client;
pub mod format;
pub mod protocol;
pub mod registry;
pub mod server;

pub use client::CloudClient;
pub use format::{decode_model, encode_model, model_checksum, ModelFile, MODEL_FORMAT_VERSION};
pub use protocol::Message;
pub use registry::{FusionPolicy, PendingUpload, Registry, SharedModelRecord};
pub use server::{serve, ServerHandle};

use crate::fusion::FusionError;
use crate::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("unsupported format_version {0}")]
    UnknownVersion(u32),
    #[error("no pending uploads; nothing to fuse")]
    NoPendingUploads,
    #[error("a fusion job is already running")]
    FusionInProgress,
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("server error {code}: {detail}")]
    Server { code: String, detail: String },
}
