use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::conv::{self, ConvCache};
use super::graph::PreparedGraph;
use super::params::ModelParams;
use super::{GnnError, ModelConfig, Pooling, BN_EPSILON, BN_MOMENTUM};
use crate::features::GraphSample;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout. `seed` keys the dropout masks.
    Train { seed: u64 },
    /// Running statistics, no dropout. Deterministic.
    Eval,
}

struct GraphCache {
    layers: Vec<ConvCache>,
    nodes: usize,
}

struct DenseCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
    y: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// Activations recorded by a training-mode forward pass.
pub struct BatchCache {
    graphs: Vec<GraphCache>,
    dense: Vec<DenseCache>,
    head_input: Array2<f64>,
    /// Batch mean and variance per dense layer, when batch statistics were used.
    pub bn_batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

pub struct BatchOutput {
    pub scores: Vec<f64>,
    pub logits: Vec<f64>,
    pub cache: Option<BatchCache>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(graphs: &[&PreparedGraph], config: &ModelConfig, params: &ModelParams) -> Result<(), GnnError> {
    if graphs.is_empty() {
        return Err(GnnError::ShapeMismatch("empty batch".into()));
    }
    if params.convs.len() != config.layers {
        return Err(GnnError::ShapeMismatch(format!(
            "params have {} conv layers, config {}",
            params.convs.len(),
            config.layers
        )));
    }
    for g in graphs {
        if g.dim() != config.input_dim {
            return Err(GnnError::ShapeMismatch(format!(
                "sample dim {} != input_dim {}",
                g.dim(),
                config.input_dim
            )));
        }
        if g.kind != config.conv {
            return Err(GnnError::ShapeMismatch(format!(
                "graph prepared for {} but model is {}",
                g.kind, config.conv
            )));
        }
    }
    Ok(())
}

/// Runs a batch of graphs. In train mode the dense layers normalize with
/// batch statistics (falling back to running statistics for a batch of one)
/// and apply dropout; the returned cache feeds [`backward`].
pub fn forward_batch(
    graphs: &[&PreparedGraph],
    config: &ModelConfig,
    params: &ModelParams,
    mode: Mode,
) -> Result<BatchOutput, GnnError> {
    check_inputs(graphs, config, params)?;
    let train = matches!(mode, Mode::Train { .. });
    let batch = graphs.len();
    let width = config.width;

    let mut pooled = Array2::<f64>::zeros((batch, width));
    let mut graph_caches = Vec::with_capacity(if train { batch } else { 0 });
    for (i, g) in graphs.iter().enumerate() {
        let mut h = g.x.clone();
        let mut layers = Vec::with_capacity(config.layers);
        for layer in &params.convs {
            let (out, cache) = conv::forward(layer, &g.op, &h);
            if train {
                layers.push(cache);
            }
            h = out;
        }
        let summed = h.sum_axis(Axis(0));
        let row = match config.pooling {
            Pooling::Sum => summed,
            Pooling::Average => summed / g.n() as f64,
        };
        pooled.row_mut(i).assign(&row);
        if train {
            graph_caches.push(GraphCache { layers, nodes: g.n() });
        }
    }

    let mut dropout_rng = match mode {
        Mode::Train { seed } => Some(seed::rng(seed, &[seed::DOMAIN_DROPOUT])),
        Mode::Eval => None,
    };
    let mut a = pooled;
    let mut dense_caches = Vec::new();
    let mut bn_batch_stats = Vec::new();
    for (dense, state) in params.dense.iter().zip(&params.bn) {
        let z = a.dot(&dense.w) + &dense.b;
        let use_batch = train && batch > 1;
        let (mean, var) = if use_batch {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = (&centered * &centered).mean_axis(Axis(0)).expect("non-empty batch");
            (mean, var)
        } else {
            (Array1::from(state.running_mean.clone()), Array1::from(state.running_var.clone()))
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let xhat = (&z - &mean) * &inv_std;
        let y = &xhat * &dense.gamma + &dense.beta;
        let mut out = y.mapv(|v| v.max(0.0));
        let mask = match dropout_rng.as_mut() {
            Some(rng) if config.dropout_rate > 0.0 => {
                let keep = 1.0 - config.dropout_rate;
                let m = Array2::from_shape_fn(out.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        bn_batch_stats.push(use_batch.then(|| (mean.clone(), var.clone())));
        if train {
            dense_caches.push(DenseCache { input: a, xhat, inv_std, batch_stats: use_batch, y, mask });
        }
        a = out;
    }

    let logits: Vec<f64> = (a.dot(&params.head_w) + params.head_b[0]).to_vec();
    let scores = logits.iter().map(|&z| sigmoid(z)).collect();
    let cache = train.then(|| BatchCache {
        graphs: graph_caches,
        dense: dense_caches,
        head_input: a,
        bn_batch_stats,
    });
    Ok(BatchOutput { scores, logits, cache })
}

/// Exact gradients of a loss with respect to every trainable parameter,
/// given `d_logits[i] = dL/dlogit_i`.
pub fn backward(
    graphs: &[&PreparedGraph],
    config: &ModelConfig,
    params: &ModelParams,
    cache: &BatchCache,
    d_logits: &[f64],
) -> ModelParams {
    let mut grads = params.zeros_like();
    let d_logit = Array1::from(d_logits.to_vec());

    grads.head_w.assign(&cache.head_input.t().dot(&d_logit));
    grads.head_b[0] = d_logit.sum();
    let mut da = d_logit.view().insert_axis(Axis(1)).dot(&params.head_w.view().insert_axis(Axis(0)));

    for (k, dc) in cache.dense.iter().enumerate().rev() {
        let dense = &params.dense[k];
        if let Some(mask) = &dc.mask {
            da *= mask;
        }
        let mut dy = da;
        dy.zip_mut_with(&dc.y, |g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        grads.dense[k].gamma = (&dy * &dc.xhat).sum_axis(Axis(0));
        grads.dense[k].beta = dy.sum_axis(Axis(0));
        let dxhat = &dy * &dense.gamma;
        let dz = if dc.batch_stats {
            let b = dxhat.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &dc.xhat).sum_axis(Axis(0));
            ((&dxhat * b) - &sum_dxhat - &(&dc.xhat * &sum_dxhat_xhat)) * &(&dc.inv_std / b)
        } else {
            &dxhat * &dc.inv_std
        };
        // Assign keeps the buffer in standard layout.
        grads.dense[k].w.assign(&dc.input.t().dot(&dz));
        grads.dense[k].b = dz.sum_axis(Axis(0));
        da = dz.dot(&dense.w.t());
    }

    for (i, (g, gc)) in graphs.iter().zip(&cache.graphs).enumerate() {
        let scale = match config.pooling {
            Pooling::Sum => 1.0,
            Pooling::Average => 1.0 / gc.nodes as f64,
        };
        let row = da.row(i).to_owned() * scale;
        let mut dh = Array2::from_shape_fn((gc.nodes, config.width), |(_, c)| row[c]);
        for (l, layer_cache) in gc.layers.iter().enumerate().rev() {
            dh = conv::backward(&params.convs[l], &mut grads.convs[l], &g.op, layer_cache, &dh);
        }
    }
    grads
}

/// Single-sample forward. Eval mode is deterministic; train mode returns the
/// cache for [`backward`].
pub fn forward(
    sample: &GraphSample,
    config: &ModelConfig,
    params: &ModelParams,
    mode: Mode,
) -> Result<(f64, Option<BatchCache>), GnnError> {
    let graph = PreparedGraph::new(sample, config.conv)?;
    let out = forward_batch(&[&graph], config, params, mode)?;
    Ok((out.scores[0], out.cache))
}

/// Eval-mode scores for many graphs.
pub fn predict(
    graphs: &[&PreparedGraph],
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<Vec<f64>, GnnError> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(forward_batch(graphs, config, params, Mode::Eval)?.scores)
}

impl ModelParams {
    /// Folds batch statistics from a training step into the running stats.
    pub fn apply_bn_updates(&mut self, cache: &BatchCache) {
        for (state, stats) in self.bn.iter_mut().zip(&cache.bn_batch_stats) {
            if let Some((mean, var)) = stats {
                for (r, m) in state.running_mean.iter_mut().zip(mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                }
                for (r, v) in state.running_var.iter_mut().zip(var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                }
            }
        }
    }
}
