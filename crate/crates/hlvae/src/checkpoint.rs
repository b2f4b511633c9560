//! Versioned model checkpoints.
//!
//! A checkpoint is a structured-text (JSON) container holding everything a
//! frozen model needs: schema, normalization statistics, kernel structure,
//! all parameters, inducing points, the variational distribution, and the
//! cached training encodings for GP-conditioned prediction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, TrainedModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    trained: TrainedModel,
}

pub fn to_json_string(trained: &TrainedModel) -> String {
    serde_json::to_string(&CheckpointFile { version: CHECKPOINT_VERSION, trained: trained.clone() })
        .expect("checkpoint serializes")
}

pub fn from_json_str(text: &str) -> Result<TrainedModel, ModelError> {
    let file: CheckpointFile = serde_json::from_str(text)
        .map_err(|e| ModelError::Invalid(format!("cannot parse checkpoint: {e}")))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(ModelError::Invalid(format!(
            "checkpoint version {} is not supported (expected {})",
            file.version, CHECKPOINT_VERSION
        )));
    }
    Ok(file.trained)
}

pub fn save(trained: &TrainedModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, to_json_string(trained))
        .map_err(|e| ModelError::Invalid(format!("cannot write checkpoint: {e}")))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Invalid(format!("cannot read checkpoint: {e}")))?;
    from_json_str(&text)
}
