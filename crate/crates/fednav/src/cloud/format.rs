//! Versioned on-disk / on-wire model document: JSON with weights embedded
//! as base64-encoded little-endian f64 arrays. Serialization is canonical,
//! so serialize -> deserialize -> serialize is byte-identical.

use super::CloudError;
use crate::nn::NetworkParameters;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    /// One base64 blob per layer, row-major (out x in), little-endian f64.
    pub weights: Vec<String>,
    pub biases: Vec<String>,
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(text: &str) -> Result<Vec<f64>, CloudError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| CloudError::Format(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(CloudError::Format("blob length not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl ModelFile {
    pub fn from_params(params: &NetworkParameters) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            layer_dims: params.layer_dims().to_vec(),
            activation: "relu".to_string(),
            weights: params.weights().iter().map(|w| encode_f64s(w)).collect(),
            biases: params.biases().iter().map(|b| encode_f64s(b)).collect(),
        }
    }

    pub fn to_params(&self) -> Result<NetworkParameters, CloudError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(CloudError::UnknownVersion(self.format_version));
        }
        if self.activation != "relu" {
            return Err(CloudError::Format(format!(
                "unsupported activation {:?}",
                self.activation
            )));
        }
        let weights = self
            .weights
            .iter()
            .map(|w| decode_f64s(w))
            .collect::<Result<Vec<_>, _>>()?;
        let biases = self
            .biases
            .iter()
            .map(|b| decode_f64s(b))
            .collect::<Result<Vec<_>, _>>()?;
        NetworkParameters::new(self.layer_dims.clone(), weights, biases)
            .map_err(|e| CloudError::Format(e.to_string()))
    }
}

/// Canonical single-line JSON form of a model.
pub fn encode_model(params: &NetworkParameters) -> String {
    serde_json::to_string(&ModelFile::from_params(params)).expect("model serializes")
}

pub fn decode_model(text: &str) -> Result<NetworkParameters, CloudError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| CloudError::Format(e.to_string()))?;
    file.to_params()
}

/// SHA-256 of the canonical serialized form, hex-encoded.
pub fn model_checksum(params: &NetworkParameters) -> String {
    let mut hasher = Sha256::new();
    hasher.update(encode_model(params).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
