//! Transfer of the shared model into a new agent: parameter warm-start, or
//! frozen feature extraction that appends the shared model's action scores
//! to the raw observation.

use crate::nn::{NetworkParameters, NnError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("warm start shape mismatch: shared layers {shared:?}, agent layers {agent:?} (first differing layer {layer})")]
    ShapeMismatch {
        shared: Vec<usize>,
        agent: Vec<usize>,
        layer: usize,
    },
    #[error("raw observation length {got} does not match shared input dim {expected}")]
    RawDim { expected: usize, got: usize },
    #[error(
        "feature-extractor agent input dim must be {expected} (raw {raw} + {scores} shared scores), got {got}"
    )]
    AugmentedDim {
        expected: usize,
        raw: usize,
        scores: usize,
        got: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// How a new agent is seeded from a shared model, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    None,
    WarmStart,
    FeatureExtractor,
}

impl std::str::FromStr for TransferMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "warm_start" => Ok(Self::WarmStart),
            "feature_extractor" => Ok(Self::FeatureExtractor),
            other => Err(format!(
                "unknown transfer mode {other:?}; expected none | warm_start | feature_extractor"
            )),
        }
    }
}

impl std::fmt::Display for TransferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::WarmStart => "warm_start",
            Self::FeatureExtractor => "feature_extractor",
        })
    }
}

/// Copies the shared parameters as the agent's initial network. The agent
/// trains its own copy; the shared model is untouched.
pub fn warm_start(
    shared: &NetworkParameters,
    agent_dims: &[usize],
) -> Result<NetworkParameters, TransferError> {
    if shared.layer_dims() != agent_dims {
        let layer = shared
            .layer_dims()
            .iter()
            .zip(agent_dims)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| shared.layer_dims().len().min(agent_dims.len()));
        return Err(TransferError::ShapeMismatch {
            shared: shared.layer_dims().to_vec(),
            agent: agent_dims.to_vec(),
            layer,
        });
    }
    Ok(shared.clone())
}

/// Appends the frozen shared model's action scores to the raw observation:
/// raw features at indices `0..raw_dim`, shared scores after. The shared
/// model itself never sees the augmented vector.
pub fn augment_observation(
    shared: &NetworkParameters,
    raw: &[f64],
) -> Result<Vec<f64>, TransferError> {
    if raw.len() != shared.input_dim() {
        return Err(TransferError::RawDim {
            expected: shared.input_dim(),
            got: raw.len(),
        });
    }
    let scores = shared.forward(raw)?;
    let mut augmented = Vec::with_capacity(raw.len() + scores.len());
    augmented.extend_from_slice(raw);
    augmented.extend_from_slice(&scores);
    Ok(augmented)
}

/// Input width a feature-extractor agent must declare.
pub fn augmented_dim(shared: &NetworkParameters) -> usize {
    shared.input_dim() + shared.output_dim()
}

/// Validates a feature-extractor agent's first layer against the shared
/// model it will consume.
pub fn check_feature_extractor_dims(
    shared: &NetworkParameters,
    agent_input_dim: usize,
) -> Result<(), TransferError> {
    let expected = augmented_dim(shared);
    if agent_input_dim != expected {
        return Err(TransferError::AugmentedDim {
            expected,
            raw: shared.input_dim(),
            scores: shared.output_dim(),
            got: agent_input_dim,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_copies_parameters() {
        let shared = NetworkParameters::init_random(&[12, 64, 64, 5], 4).unwrap();
        let agent = warm_start(&shared, &[12, 64, 64, 5]).unwrap();
        let input = vec![0.7; 12];
        assert_eq!(agent.forward(&input).unwrap(), shared.forward(&input).unwrap());
    }

    #[test]
    fn warm_start_rejects_shape_mismatch() {
        let shared = NetworkParameters::init_random(&[12, 32, 5], 4).unwrap();
        let err = warm_start(&shared, &[12, 64, 64, 5]).unwrap_err();
        match err {
            TransferError::ShapeMismatch { layer, .. } => assert_eq!(layer, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn augment_appends_forward_output() {
        let shared = NetworkParameters::init_random(&[12, 16, 5], 8).unwrap();
        let raw: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let augmented = augment_observation(&shared, &raw).unwrap();
        assert_eq!(augmented.len(), 17);
        assert_eq!(&augmented[..12], raw.as_slice());
        assert_eq!(&augmented[12..], shared.forward(&raw).unwrap().as_slice());
    }

    #[test]
    fn augment_with_zero_network_appends_zeros() {
        let shared = NetworkParameters::new(
            vec![3, 2],
            vec![vec![0.0; 6]],
            vec![vec![0.0; 2]],
        )
        .unwrap();
        let augmented = augment_observation(&shared, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(augmented, vec![1.0, 2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_extractor_dim_contract() {
        let shared = NetworkParameters::init_random(&[12, 16, 5], 8).unwrap();
        assert!(check_feature_extractor_dims(&shared, 17).is_ok());
        assert!(matches!(
            check_feature_extractor_dims(&shared, 12),
            Err(TransferError::AugmentedDim { expected: 17, .. })
        ));
    }

    #[test]
    fn augment_rejects_bad_raw_dim() {
        let shared = NetworkParameters::init_random(&[12, 16, 5], 8).unwrap();
        assert!(matches!(
            augment_observation(&shared, &[0.0; 11]),
            Err(TransferError::RawDim { .. })
        ));
    }
}
