use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvKind, GnnError, ModelConfig, DENSE_LAYERS};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum ConvParams {
    Gcn { w: Array2<f64>, b: Array1<f64> },
    Sage { w_self: Array2<f64>, w_neigh: Array2<f64>, b: Array1<f64> },
    Gin { w1: Array2<f64>, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64> },
    /// `beta` holds the single learnable temperature.
    Agnn { w: Array2<f64>, b: Array1<f64>, beta: Array1<f64> },
    General { w_self: Array2<f64>, w_msg: Array2<f64>, b_msg: Array1<f64> },
}

impl ConvParams {
    fn init(kind: ConvKind, fan_in: usize, width: usize, rng: &mut impl Rng) -> Self {
        match kind {
            ConvKind::Gcn => ConvParams::Gcn { w: glorot(fan_in, width, rng), b: Array1::zeros(width) },
            ConvKind::Sage => ConvParams::Sage {
                w_self: glorot(fan_in, width, rng),
                w_neigh: glorot(fan_in, width, rng),
                b: Array1::zeros(width),
            },
            ConvKind::Gin => ConvParams::Gin {
                w1: glorot(fan_in, width, rng),
                b1: Array1::zeros(width),
                w2: glorot(width, width, rng),
                b2: Array1::zeros(width),
            },
            ConvKind::Agnn => ConvParams::Agnn {
                w: glorot(fan_in, width, rng),
                b: Array1::zeros(width),
                beta: Array1::from_elem(1, 1.0),
            },
            ConvKind::General => ConvParams::General {
                w_self: glorot(fan_in, width, rng),
                w_msg: glorot(fan_in, width, rng),
                b_msg: Array1::zeros(width),
            },
        }
    }

    fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        match self {
            ConvParams::Gcn { w, b } => ConvParams::Gcn { w: z2(w), b: z1(b) },
            ConvParams::Sage { w_self, w_neigh, b } => {
                ConvParams::Sage { w_self: z2(w_self), w_neigh: z2(w_neigh), b: z1(b) }
            }
            ConvParams::Gin { w1, b1, w2, b2 } => {
                ConvParams::Gin { w1: z2(w1), b1: z1(b1), w2: z2(w2), b2: z1(b2) }
            }
            ConvParams::Agnn { w, b, beta } => ConvParams::Agnn { w: z2(w), b: z1(b), beta: z1(beta) },
            ConvParams::General { w_self, w_msg, b_msg } => {
                ConvParams::General { w_self: z2(w_self), w_msg: z2(w_msg), b_msg: z1(b_msg) }
            }
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        match self {
            ConvParams::Gcn { w, b } => vec![s2(w), s1(b)],
            ConvParams::Sage { w_self, w_neigh, b } => vec![s2(w_self), s2(w_neigh), s1(b)],
            ConvParams::Gin { w1, b1, w2, b2 } => vec![s2(w1), s1(b1), s2(w2), s1(b2)],
            ConvParams::Agnn { w, b, beta } => vec![s2(w), s1(b), s1(beta)],
            ConvParams::General { w_self, w_msg, b_msg } => vec![s2(w_self), s2(w_msg), s1(b_msg)],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        match self {
            ConvParams::Gcn { w, b } => vec![s2(w), s1(b)],
            ConvParams::Sage { w_self, w_neigh, b } => vec![s2(w_self), s2(w_neigh), s1(b)],
            ConvParams::Gin { w1, b1, w2, b2 } => vec![s2(w1), s1(b1), s2(w2), s1(b2)],
            ConvParams::Agnn { w, b, beta } => vec![s2(w), s1(b), s1(beta)],
            ConvParams::General { w_self, w_msg, b_msg } => vec![s2(w_self), s2(w_msg), s1(b_msg)],
        }
    }
}

/// Dense layer followed by batch normalization (scale `gamma`, shift `beta`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub convs: Vec<ConvParams>,
    pub dense: Vec<DenseParams>,
    /// Non-trainable running statistics, one per dense layer.
    pub bn: Vec<BatchNormState>,
    pub head_w: Array1<f64>,
    pub head_b: Array1<f64>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale. Layer `l`
    /// draws from the stream `(seed, l)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, GnnError> {
        config.validate()?;
        let width = config.width;
        let mut layer = 0u64;
        let mut next_rng = || {
            layer += 1;
            seed::rng(seed, &[seed::DOMAIN_INIT, layer - 1])
        };
        let convs = (0..config.layers)
            .map(|l| {
                let fan_in = if l == 0 { config.input_dim } else { width };
                ConvParams::init(config.conv, fan_in, width, &mut next_rng())
            })
            .collect();
        let dense = (0..DENSE_LAYERS)
            .map(|_| DenseParams {
                w: glorot(width, width, &mut next_rng()),
                b: Array1::zeros(width),
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
            })
            .collect();
        let bn = (0..DENSE_LAYERS)
            .map(|_| BatchNormState { running_mean: vec![0.0; width], running_var: vec![1.0; width] })
            .collect();
        let head = glorot(width, 1, &mut next_rng());
        Ok(ModelParams {
            convs,
            dense,
            bn,
            head_w: head.column(0).to_owned(),
            head_b: Array1::zeros(1),
        })
    }

    /// Same shapes, all trainable entries zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            convs: self.convs.iter().map(ConvParams::zeros_like).collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseParams {
                    w: Array2::zeros(d.w.raw_dim()),
                    b: Array1::zeros(d.b.raw_dim()),
                    gamma: Array1::zeros(d.gamma.raw_dim()),
                    beta: Array1::zeros(d.beta.raw_dim()),
                })
                .collect(),
            bn: self.bn.clone(),
            head_w: Array1::zeros(self.head_w.raw_dim()),
            head_b: Array1::zeros(1),
        }
    }

    /// Trainable tensors in a fixed order: conv layers, dense layers
    /// (w, b, gamma, beta), head weights, head bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.slices());
        }
        for d in &self.dense {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
            out.push(d.gamma.as_slice().expect("standard layout"));
            out.push(d.beta.as_slice().expect("standard layout"));
        }
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.slices_mut());
        }
        for d in &mut self.dense {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
            out.push(d.gamma.as_slice_mut().expect("standard layout"));
            out.push(d.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Expected tensor lengths for `config`, in [`tensors`](Self::tensors) order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<usize> {
        let w = config.width;
        let mut out = Vec::new();
        for l in 0..config.layers {
            let fan_in = if l == 0 { config.input_dim } else { w };
            match config.conv {
                ConvKind::Gcn => out.extend([fan_in * w, w]),
                ConvKind::Sage => out.extend([fan_in * w, fan_in * w, w]),
                ConvKind::Gin => out.extend([fan_in * w, w, w * w, w]),
                ConvKind::Agnn => out.extend([fan_in * w, w, 1]),
                ConvKind::General => out.extend([fan_in * w, fan_in * w, w]),
            }
        }
        for _ in 0..DENSE_LAYERS {
            out.extend([w * w, w, w, w]);
        }
        out.extend([w, 1]);
        out
    }
}
