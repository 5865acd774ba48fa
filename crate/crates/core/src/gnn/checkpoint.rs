use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{BatchNormState, ModelParams};
use super::{GnnError, ModelConfig};

pub const FORMAT: &str = "scools-gnn";
pub const VERSION: u32 = 1;

/// Versioned JSON model blob. Floats are written in shortest round-trip
/// form and parsed with exact rounding, so reload is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Seed the weights were initialized from.
    pub seed: u64,
    pub tensors: Vec<Vec<f64>>,
    pub batch_norm: Vec<BatchNormState>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, seed: u64, params: &ModelParams) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            seed,
            tensors: params.tensors().into_iter().map(<[f64]>::to_vec).collect(),
            batch_norm: params.bn.clone(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, GnnError> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(GnnError::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let expected = ModelParams::expected_shapes(&self.config);
        let found: Vec<usize> = self.tensors.iter().map(Vec::len).collect();
        if expected != found {
            return Err(GnnError::Checkpoint(format!(
                "tensor shapes {found:?} do not match {}",
                self.config
            )));
        }
        let width = self.config.width;
        if self.batch_norm.len() != super::DENSE_LAYERS
            || self
                .batch_norm
                .iter()
                .any(|s| s.running_mean.len() != width || s.running_var.len() != width)
        {
            return Err(GnnError::Checkpoint("batch-norm state has the wrong shape".into()));
        }
        let mut params = ModelParams::init(&self.config, self.seed)?;
        for (dst, src) in params.tensors_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(src);
        }
        params.bn = self.batch_norm.clone();
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GnnError> {
        serde_json::from_str(text).map_err(|e| GnnError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| GnnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GnnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
