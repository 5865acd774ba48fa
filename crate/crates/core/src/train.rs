//! Grid enumeration, Adam training with binary cross-entropy, and
//! rolling-window early stopping that restores the best epoch.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::GraphSample;
use crate::gnn::{
    self, ConvKind, GnnError, Mode, ModelConfig, ModelParams, Pooling, PreparedGraph, LEGAL_LAYERS,
    LEGAL_WIDTHS,
};
use crate::seed;

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("DivergedLoss: non-finite loss in epoch {epoch} of {config}")]
    DivergedLoss { config: String, epoch: usize, state: Box<TrainState> },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("sample {0} has no label")]
    MissingLabel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_window: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Weight each class by `N / (2 N_class)` in the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 2048,
            max_epochs: 1000,
            patience_window: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience_window == 0 {
            return bad("batch_size, max_epochs and patience_window must be positive".into());
        }
        if self.patience_window >= self.max_epochs {
            return bad(format!(
                "patience_window {} must be below max_epochs {}",
                self.patience_window, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam hyperparameters out of range".into());
        }
        Ok(())
    }
}

/// All 120 legal configurations ordered by (conv, layers, width, pooling).
pub fn enumerate_grid(input_dim: usize) -> Vec<ModelConfig> {
    enumerate_grid_restricted(input_dim, &ConvKind::ALL, &LEGAL_LAYERS, &LEGAL_WIDTHS, &Pooling::ALL)
}

pub fn enumerate_grid_restricted(
    input_dim: usize,
    kinds: &[ConvKind],
    layers: &[usize],
    widths: &[usize],
    poolings: &[Pooling],
) -> Vec<ModelConfig> {
    let mut kinds = kinds.to_vec();
    let mut layers = layers.to_vec();
    let mut widths = widths.to_vec();
    let mut poolings = poolings.to_vec();
    kinds.sort();
    kinds.dedup();
    layers.sort();
    layers.dedup();
    widths.sort();
    widths.dedup();
    poolings.sort();
    poolings.dedup();
    let mut out = Vec::new();
    for &conv in &kinds {
        for &l in &layers {
            for &w in &widths {
                for &p in &poolings {
                    out.push(ModelConfig::new(conv, l, w, p, input_dim));
                }
            }
        }
    }
    out
}

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(p: f64, label: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// `dL/dlogit` for a sigmoid output under [`loss`].
pub fn loss_grad_logit(p: f64, label: f64) -> f64 {
    p - label
}

/// One epoch's row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainState {
    pub fn epochs_run(&self) -> usize {
        self.curve.len()
    }

    pub fn write_curve_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.curve {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tracks the best validation loss; earliest epoch wins ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_epoch: 0, best_loss: f64::INFINITY }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            return StopDecision::Improved;
        }
        if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Runs `epoch_fn` for epochs `1..=max_epochs`, snapshotting `params` whenever
/// the validation loss improves and restoring the best snapshot on exit.
/// `epoch_fn` trains `params` in place and reports the epoch's metrics.
pub fn fit_with_early_stopping<P, E>(
    params: &mut P,
    max_epochs: usize,
    patience: usize,
    mut epoch_fn: impl FnMut(usize, &mut P) -> Result<EpochRecord, E>,
    mut diverged: impl FnMut(usize, TrainState) -> E,
) -> Result<TrainState, E>
where
    P: Clone,
{
    let mut stopper = EarlyStopping::new(patience);
    let mut state = TrainState::default();
    let mut best = params.clone();
    for epoch in 1..=max_epochs {
        let record = epoch_fn(epoch, params)?;
        state.curve.push(record);
        if !record.train_loss.is_finite() || !record.val_loss.is_finite() {
            state.best_epoch = stopper.best_epoch;
            state.best_val_loss = stopper.best_loss;
            return Err(diverged(epoch, state));
        }
        match stopper.observe(epoch, record.val_loss) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    *params = best;
    state.best_epoch = stopper.best_epoch;
    state.best_val_loss = stopper.best_loss;
    Ok(state)
}

/// A training sample and its loss weight before class balancing.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub sample: &'a GraphSample,
    pub weight: f64,
}

impl<'a> Example<'a> {
    pub fn new(sample: &'a GraphSample) -> Self {
        Example { sample, weight: 1.0 }
    }
}

/// Examples already prepared for one conv kind.
#[derive(Debug, Clone, Copy)]
pub struct PreparedExample<'a> {
    pub graph: &'a PreparedGraph,
    pub target: f64,
    pub weight: f64,
}

pub fn prepare_examples(
    examples: &[Example<'_>],
    kind: ConvKind,
) -> Result<Vec<(PreparedGraph, f64, f64)>, TrainError> {
    examples
        .iter()
        .map(|e| {
            let label = e.sample.label.ok_or_else(|| TrainError::MissingLabel(e.sample.source_id.clone()))?;
            Ok((PreparedGraph::new(e.sample, kind)?, label.as_target(), e.weight))
        })
        .collect()
}

fn borrow_prepared(items: &[(PreparedGraph, f64, f64)]) -> Vec<PreparedExample<'_>> {
    items.iter().map(|(g, t, w)| PreparedExample { graph: g, target: *t, weight: *w }).collect()
}

/// Multiplies weights by `N / (2 N_c)` for each class present.
fn balance(examples: &[PreparedExample<'_>]) -> Vec<f64> {
    let n = examples.len() as f64;
    let pos = examples.iter().filter(|e| e.target > 0.5).count() as f64;
    let neg = n - pos;
    examples
        .iter()
        .map(|e| {
            let class = if e.target > 0.5 { pos } else { neg };
            let factor = if pos == 0.0 || neg == 0.0 { 1.0 } else { n / (2.0 * class) };
            e.weight * factor
        })
        .collect()
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, tc: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - tc.adam_beta1.powi(self.t);
        let c2 = 1.0 - tc.adam_beta2.powi(self.t);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = tc.adam_beta1 * m[i] + (1.0 - tc.adam_beta1) * g[i];
                v[i] = tc.adam_beta2 * v[i] + (1.0 - tc.adam_beta2) * g[i] * g[i];
                p[i] -= tc.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + tc.adam_eps);
            }
        }
    }
}

/// Weighted mean loss and accuracy (threshold 0.5) in eval mode.
pub fn evaluate(
    examples: &[PreparedExample<'_>],
    weights: &[f64],
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(f64, f64), GnnError> {
    let graphs: Vec<&PreparedGraph> = examples.iter().map(|e| e.graph).collect();
    let scores = gnn::predict(&graphs, config, params)?;
    Ok(score_metrics(&scores, examples, weights))
}

fn score_metrics(scores: &[f64], examples: &[PreparedExample<'_>], weights: &[f64]) -> (f64, f64) {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut correct = 0usize;
    for ((p, e), w) in scores.iter().zip(examples).zip(weights) {
        total += w * loss(*p, e.target);
        weight += w;
        if (*p >= 0.5) == (e.target > 0.5) {
            correct += 1;
        }
    }
    (total / weight, correct as f64 / examples.len() as f64)
}

/// Trains one model from `init` (fresh Glorot weights from `model_seed` when `None`).
pub fn train_prepared(
    config: &ModelConfig,
    train: &[PreparedExample<'_>],
    val: &[PreparedExample<'_>],
    tc: &TrainConfig,
    model_seed: u64,
    init: Option<ModelParams>,
) -> Result<(ModelParams, TrainState), TrainError> {
    tc.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let mut params = match init {
        Some(p) => p,
        None => ModelParams::init(config, model_seed)?,
    };
    let (train_w, val_w) = if tc.class_weighting {
        (balance(train), balance(val))
    } else {
        (train.iter().map(|e| e.weight).collect(), val.iter().map(|e| e.weight).collect())
    };
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let label = config.to_string();

    let state = fit_with_early_stopping(
        &mut params,
        tc.max_epochs,
        tc.patience_window,
        |epoch, params| -> Result<EpochRecord, TrainError> {
            let mut rng = seed::rng(model_seed, &[seed::DOMAIN_SHUFFLE, epoch as u64]);
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut weight_sum = 0.0;
            let mut correct = 0usize;
            for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
                let graphs: Vec<&PreparedGraph> = chunk.iter().map(|&i| train[i].graph).collect();
                let dropout_seed = seed::derive_seed(model_seed, &[seed::DOMAIN_DROPOUT, epoch as u64, b as u64]);
                let out = gnn::forward_batch(&graphs, config, params, Mode::Train { seed: dropout_seed })?;
                let scale = 1.0 / chunk.len() as f64;
                let mut d_logits = Vec::with_capacity(chunk.len());
                for (&i, &p) in chunk.iter().zip(&out.scores) {
                    let (t, w) = (train[i].target, train_w[i]);
                    loss_sum += w * loss(p, t);
                    weight_sum += w;
                    correct += usize::from((p >= 0.5) == (t > 0.5));
                    d_logits.push(w * loss_grad_logit(p, t) * scale);
                }
                let cache = out.cache.expect("train mode returns a cache");
                let grads = gnn::backward(&graphs, config, params, &cache, &d_logits);
                adam.step(params, &grads, tc);
                params.apply_bn_updates(&cache);
            }
            let (val_loss, val_acc) = evaluate(val, &val_w, config, params)?;
            Ok(EpochRecord {
                epoch,
                train_loss: loss_sum / weight_sum,
                val_loss,
                train_acc: correct as f64 / train.len() as f64,
                val_acc,
            })
        },
        |epoch, state| TrainError::DivergedLoss { config: label.clone(), epoch, state: Box::new(state) },
    )?;
    Ok((params, state))
}

/// Trains one model on labeled samples.
pub fn train_model(
    config: &ModelConfig,
    train: &[Example<'_>],
    val: &[Example<'_>],
    tc: &TrainConfig,
    model_seed: u64,
) -> Result<(ModelParams, TrainState), TrainError> {
    let train = prepare_examples(train, config.conv)?;
    let val = prepare_examples(val, config.conv)?;
    train_prepared(config, &borrow_prepared(&train), &borrow_prepared(&val), tc, model_seed, None)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Position in the configuration list; keys the model's seed.
    pub index: usize,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ModelParams,
    pub state: TrainState,
}

/// Seed of model `index` under root seed `root`.
pub fn model_seed(root: u64, index: usize) -> u64 {
    seed::derive_seed(root, &[seed::DOMAIN_MODEL, index as u64])
}

/// Trains every config on a bounded pool of `jobs` threads. Results keep
/// config order. `warm` optionally supplies starting weights per index.
pub fn train_grid(
    configs: &[ModelConfig],
    train: &[Example<'_>],
    val: &[Example<'_>],
    tc: &TrainConfig,
    jobs: usize,
    warm: Option<&[ModelParams]>,
) -> Result<Vec<Result<TrainedModel, TrainError>>, TrainError> {
    let mut kinds: Vec<ConvKind> = configs.iter().map(|c| c.conv).collect();
    kinds.sort();
    kinds.dedup();
    let mut prepared = Vec::new();
    for kind in kinds {
        prepared.push((kind, prepare_examples(train, kind)?, prepare_examples(val, kind)?));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(index, config)| {
                let (_, tr, va) = prepared.iter().find(|(k, _, _)| *k == config.conv).expect("prepared per kind");
                let seed = model_seed(tc.seed, index);
                let init = warm.and_then(|w| w.get(index)).cloned();
                let (params, state) =
                    train_prepared(config, &borrow_prepared(tr), &borrow_prepared(va), tc, seed, init)?;
                Ok(TrainedModel { index, config: *config, seed, params, state })
            })
            .collect()
    }))
}
