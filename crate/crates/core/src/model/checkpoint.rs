//! JSON checkpoints with base64-encoded little-endian `f64` blocks.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use treat_autodiff::Tensor;

use super::{Model, ModelConfig, ModelError, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "treat-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    schema_version: u32,
    format: String,
    pub config: ModelConfig,
    params: Vec<StoredTensor>,
}

fn encode(data: &[f64]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str) -> Result<Vec<f64>, ModelError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ModelError::Checkpoint(format!("parameter `{name}`: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Checkpoint(format!(
            "parameter `{name}`: {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            schema_version: CHECKPOINT_VERSION,
            format: CHECKPOINT_FORMAT.to_string(),
            config: model.config.clone(),
            params: model
                .params
                .names
                .iter()
                .zip(&model.params.tensors)
                .map(|(name, t)| StoredTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: encode(t.data()),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.schema_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "schema version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.schema_version
            )));
        }
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "format is `{}`, expected `{CHECKPOINT_FORMAT}`",
                ck.format
            )));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint always serializes")
    }

    /// Rebuilds the model, rejecting any parameter whose name, shape, or
    /// element count disagrees with the stored configuration.
    pub fn into_model(self) -> Result<Model, ModelError> {
        let mut names = Vec::with_capacity(self.params.len());
        let mut tensors = Vec::with_capacity(self.params.len());
        for p in self.params {
            let data = decode(&p.name, &p.data)?;
            let t = Tensor::from_vec(p.shape.clone(), data).map_err(|_| {
                ModelError::Mismatch(format!("parameter `{}` data does not fill shape {:?}", p.name, p.shape))
            })?;
            names.push(p.name);
            tensors.push(t);
        }
        Model::from_params(self.config, ModelParams { names, tensors })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<(), ModelError> {
    let mut text = Checkpoint::from_model(model).to_json();
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    Checkpoint::parse(&fs::read_to_string(path)?)?.into_model()
}
