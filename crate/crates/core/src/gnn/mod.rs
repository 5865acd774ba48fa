//! Graph classifiers: convolution stack, node pooling, two batch-normalized
//! dense layers and a sigmoid output unit, with exact analytic gradients.
//!
//! Convolution semantics per kind (`A` is the directed CFG adjacency,
//! `N_in(v)` the predecessors of `v`):
//!
//! | kind      | propagation                                                        | adjacency   |
//! |-----------|--------------------------------------------------------------------|-------------|
//! | `Gcn`     | `ReLU(D^-1/2 (S + I) D^-1/2 H W + b)`                              | symmetrized |
//! | `Sage`    | `ReLU(h_v W_self + mean_{N_in(v)} h_u W_neigh + b)`                | in-edges    |
//! | `Gin`     | `ReLU(MLP(h_v + sum_{N_in(v)} h_u))`, two-layer MLP                | in-edges    |
//! | `Agnn`    | `ReLU(sum_u P_vu x_u)`, `x = hW + b`, `P = softmax(beta cos(x_v, x_u))` over `S(v) + v` | symmetrized |
//! | `General` | `ReLU(h_v W_self + sum_{N_in(v)} ReLU(h_u W_msg + b))`             | in-edges    |

mod checkpoint;
mod conv;
mod graph;
mod model;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use graph::PreparedGraph;
pub use model::{
    backward, forward, forward_batch, predict, BatchCache, BatchOutput, Mode,
};
pub use params::{BatchNormState, ConvParams, DenseParams, ModelParams};

pub const LEGAL_LAYERS: [usize; 3] = [1, 2, 3];
pub const LEGAL_WIDTHS: [usize; 4] = [32, 64, 128, 256];
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;
/// Dense layers after pooling.
pub const DENSE_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnnError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConvKind {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "SAGE")]
    Sage,
    #[serde(rename = "GIN")]
    Gin,
    #[serde(rename = "AGNN")]
    Agnn,
    #[serde(rename = "GENERAL")]
    General,
}

impl ConvKind {
    pub const ALL: [ConvKind; 5] =
        [ConvKind::Gcn, ConvKind::Sage, ConvKind::Gin, ConvKind::Agnn, ConvKind::General];

    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Gcn => "GCN",
            ConvKind::Sage => "SAGE",
            ConvKind::Gin => "GIN",
            ConvKind::Agnn => "AGNN",
            ConvKind::General => "GENERAL",
        }
    }

    pub fn parse(text: &str) -> Option<ConvKind> {
        ConvKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(text))
    }

    /// Whether this kind propagates over the symmetrized adjacency.
    pub fn symmetric(self) -> bool {
        matches!(self, ConvKind::Gcn | ConvKind::Agnn)
    }
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Average,
    Sum,
}

impl Pooling {
    pub const ALL: [Pooling; 2] = [Pooling::Average, Pooling::Sum];
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Average => "average",
            Pooling::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv: ConvKind,
    pub layers: usize,
    pub width: usize,
    pub pooling: Pooling,
    pub dropout_rate: f64,
    pub input_dim: usize,
}

impl ModelConfig {
    pub fn new(conv: ConvKind, layers: usize, width: usize, pooling: Pooling, input_dim: usize) -> Self {
        ModelConfig { conv, layers, width, pooling, dropout_rate: DEFAULT_DROPOUT, input_dim }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if !LEGAL_LAYERS.contains(&self.layers) {
            return Err(GnnError::InvalidConfig(format!("layers {} not in {LEGAL_LAYERS:?}", self.layers)));
        }
        if !LEGAL_WIDTHS.contains(&self.width) {
            return Err(GnnError::InvalidConfig(format!("width {} not in {LEGAL_WIDTHS:?}", self.width)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(GnnError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        if self.input_dim == 0 {
            return Err(GnnError::InvalidConfig("input_dim is zero".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}x{}-{}", self.conv, self.layers, self.width, self.pooling)
    }
}

#[cfg(test)]
mod tests;
