//! Self-training: fit the grid on labeled data, let the committee
//! pseudo-label the unlabeled pool, merge with the trusted core, repeat.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::committee::{Committee, Verdict, VerdictLabel};
use crate::dataset::{stratified_split, SplitSpec};
use crate::features::{GraphSample, Label};
use crate::gnn::{self, ConvKind, GnnError, ModelConfig, ModelParams, PreparedGraph};
use crate::seed;
use crate::train::{train_grid, Example, TrainConfig, TrainError, TrainedModel};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("empty trusted set")]
    EmptyTrusted,
    #[error("trusted sample {0} has no label")]
    UnlabeledTrusted(String),
    #[error("trusted id {0} appears with conflicting labels")]
    ConflictingTrusted(String),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("empty model grid")]
    NoModels,
    #[error("invalid committee bands")]
    InvalidCommittee,
    #[error("iteration {iteration}: model {index} failed: {source}")]
    ModelFailed { iteration: usize, index: usize, source: TrainError },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("validation split: {0}")]
    Split(String),
}

/// Where each model's validation loss comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// Stratified hold-out of this fraction of the labeled set.
    Holdout(f64),
    /// Train on everything labeled and validate on the trusted core.
    Trusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainOptions {
    pub iterations: usize,
    pub committee: Committee,
    pub validation: Validation,
    /// Loss weight of pseudo-labeled samples relative to trusted ones.
    pub pseudo_weight: f64,
    /// Start each iteration from the previous iteration's weights.
    pub warm_start: bool,
    /// Stop early once |accepted| changes by less than this fraction.
    pub convergence: Option<f64>,
    pub jobs: usize,
}

impl Default for SelfTrainOptions {
    fn default() -> Self {
        SelfTrainOptions {
            iterations: 3,
            committee: Committee::default(),
            validation: Validation::Holdout(0.2),
            pseudo_weight: 1.0,
            warm_start: false,
            convergence: None,
            jobs: 1,
        }
    }
}

/// Trusted and unlabeled samples after ingestion checks.
#[derive(Debug, Clone)]
pub struct SelfTrainData {
    pub trusted: Vec<GraphSample>,
    pub unlabeled: Vec<GraphSample>,
    /// Unlabeled ids dropped because the trusted core already holds them.
    pub rejected: Vec<String>,
}

impl SelfTrainData {
    /// Deduplicates by id. Labels on unlabeled samples are ignored.
    pub fn new(trusted: Vec<GraphSample>, unlabeled: Vec<GraphSample>) -> Result<Self, SelfTrainError> {
        let mut seen: BTreeMap<String, Label> = BTreeMap::new();
        let mut kept = Vec::with_capacity(trusted.len());
        for s in trusted {
            let label = s.label.ok_or_else(|| SelfTrainError::UnlabeledTrusted(s.source_id.clone()))?;
            match seen.get(&s.source_id) {
                Some(&l) if l != label => return Err(SelfTrainError::ConflictingTrusted(s.source_id)),
                Some(_) => {}
                None => {
                    seen.insert(s.source_id.clone(), label);
                    kept.push(s);
                }
            }
        }
        if kept.is_empty() {
            return Err(SelfTrainError::EmptyTrusted);
        }
        let mut rejected = Vec::new();
        let mut ids = HashSet::new();
        let mut pool = Vec::with_capacity(unlabeled.len());
        for mut s in unlabeled {
            if seen.contains_key(&s.source_id) {
                rejected.push(s.source_id);
            } else if ids.insert(s.source_id.clone()) {
                s.label = None;
                pool.push(s);
            }
        }
        Ok(SelfTrainData { trusted: kept, unlabeled: pool, rejected })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPool {
    pub trusted: BTreeMap<String, Label>,
    /// Pseudo-label and the iteration that assigned it.
    pub accepted: BTreeMap<String, (Label, usize)>,
    pub unknown: BTreeSet<String>,
}

impl LabeledPool {
    pub fn new(data: &SelfTrainData) -> Self {
        LabeledPool {
            trusted: data.trusted.iter().map(|s| (s.source_id.clone(), s.label.expect("checked on ingestion"))).collect(),
            accepted: BTreeMap::new(),
            unknown: data.unlabeled.iter().map(|s| s.source_id.clone()).collect(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.accepted.keys().all(|k| !self.trusted.contains_key(k) && !self.unknown.contains(k))
            && self.unknown.iter().all(|k| !self.trusted.contains_key(k))
    }

    /// JSON lines of `{"id","label","provenance"}` for trusted and accepted
    /// entries, trusted first, each sorted by id.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            label: Label,
            provenance: String,
        }
        for (id, &label) in &self.trusted {
            serde_json::to_writer(&mut out, &Line { id, label, provenance: "trusted".into() })?;
            out.write_all(b"\n")?;
        }
        for (id, &(label, it)) in &self.accepted {
            serde_json::to_writer(&mut out, &Line { id, label, provenance: format!("accepted-iter{it}") })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based; iteration 1 trains on the trusted core alone.
    pub iteration: usize,
    pub vulnerable: usize,
    pub non_vulnerable: usize,
    pub unknown: usize,
    pub val_losses: Vec<f64>,
    pub wall_seconds: f64,
}

pub fn write_reports_csv<W: Write>(reports: &[IterationReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "vulnerable", "non_vulnerable", "unknown", "mean_val_loss", "max_val_loss", "wall_seconds"])?;
    for r in reports {
        let n = r.val_losses.len().max(1) as f64;
        let mean = r.val_losses.iter().sum::<f64>() / n;
        let max = r.val_losses.iter().copied().fold(f64::NAN, f64::max);
        w.write_record([
            r.iteration.to_string(),
            r.vulnerable.to_string(),
            r.non_vulnerable.to_string(),
            r.unknown.to_string(),
            format!("{mean:.6}"),
            format!("{max:.6}"),
            format!("{:.3}", r.wall_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-model scores for one unlabeled sample and the committee's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub scores: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub models: Vec<TrainedModel>,
    pub pool: LabeledPool,
    pub report: IterationReport,
    pub scored: Vec<ScoredSample>,
}

fn iteration_train_config(tc: &TrainConfig, iteration: usize) -> TrainConfig {
    TrainConfig { seed: seed::derive_seed(tc.seed, &[seed::DOMAIN_ITERATION, iteration as u64]), ..*tc }
}

/// Scores every sample with every model. Rows follow `samples`.
pub fn score_pool(
    models: &[(&ModelConfig, &ModelParams)],
    samples: &[GraphSample],
    jobs: usize,
) -> Result<Vec<Vec<f64>>, GnnError> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let mut kinds: Vec<ConvKind> = models.iter().map(|m| m.0.conv).collect();
    kinds.sort();
    kinds.dedup();
    let mut prepared: Vec<(ConvKind, Vec<PreparedGraph>)> = Vec::new();
    for k in kinds {
        let graphs = samples.iter().map(|s| PreparedGraph::new(s, k)).collect::<Result<Vec<_>, _>>()?;
        prepared.push((k, graphs));
    }
    let run = || {
        models
            .par_iter()
            .map(|(config, params)| {
                let graphs = &prepared.iter().find(|(k, _)| *k == config.conv).expect("prepared per kind").1;
                let mut scores = Vec::with_capacity(graphs.len());
                for chunk in graphs.chunks(4096) {
                    let refs: Vec<&PreparedGraph> = chunk.iter().collect();
                    scores.extend(gnn::predict(&refs, config, params)?);
                }
                Ok(scores)
            })
            .collect::<Result<Vec<_>, GnnError>>()
    };
    let per_model: Vec<Vec<f64>> = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(run)?,
        Err(_) => run()?,
    };
    Ok((0..samples.len()).map(|i| per_model.iter().map(|s| s[i]).collect()).collect())
}

/// One round: train every config on trusted plus accepted, then relabel the
/// whole unlabeled pool from scratch.
pub fn run_iteration(
    pool: &LabeledPool,
    data: &SelfTrainData,
    configs: &[ModelConfig],
    tc: &TrainConfig,
    opts: &SelfTrainOptions,
    iteration: usize,
    warm: Option<&[ModelParams]>,
) -> Result<IterationOutput, SelfTrainError> {
    if configs.is_empty() {
        return Err(SelfTrainError::NoModels);
    }
    if !opts.committee.is_valid() {
        return Err(SelfTrainError::InvalidCommittee);
    }
    let start = Instant::now();
    let mut labeled: Vec<GraphSample> = data.trusted.clone();
    for s in &data.unlabeled {
        if let Some(&(label, _)) = pool.accepted.get(&s.source_id) {
            let mut s = s.clone();
            s.label = Some(label);
            labeled.push(s);
        }
    }
    let tc_i = iteration_train_config(tc, iteration);
    let (train_set, val_set) = match opts.validation {
        Validation::Holdout(frac) => {
            let spec = SplitSpec { ratio: 1.0 - frac, study_size: None, seed: tc_i.seed };
            stratified_split(&labeled, &spec).map_err(|e| SelfTrainError::Split(e.to_string()))?
        }
        Validation::Trusted => (labeled, data.trusted.clone()),
    };
    let weight = |s: &GraphSample| if pool.trusted.contains_key(&s.source_id) { 1.0 } else { opts.pseudo_weight };
    let train: Vec<Example> = train_set.iter().map(|s| Example { sample: s, weight: weight(s) }).collect();
    let val: Vec<Example> = val_set.iter().map(|s| Example { sample: s, weight: weight(s) }).collect();

    let mut models = Vec::with_capacity(configs.len());
    for (index, r) in train_grid(configs, &train, &val, &tc_i, opts.jobs, warm)?.into_iter().enumerate() {
        models.push(r.map_err(|source| SelfTrainError::ModelFailed { iteration, index, source })?);
    }

    let refs: Vec<(&ModelConfig, &ModelParams)> = models.iter().map(|m| (&m.config, &m.params)).collect();
    let scores = score_pool(&refs, &data.unlabeled, opts.jobs)?;
    let mut next = LabeledPool { trusted: pool.trusted.clone(), accepted: BTreeMap::new(), unknown: BTreeSet::new() };
    let mut scored = Vec::with_capacity(scores.len());
    let (mut vulnerable, mut non_vulnerable) = (0, 0);
    for (s, row) in data.unlabeled.iter().zip(scores) {
        let verdict = opts.committee.classify(&row);
        match verdict.label {
            VerdictLabel::Vulnerable => {
                vulnerable += 1;
                next.accepted.insert(s.source_id.clone(), (Label::Vulnerable, iteration));
            }
            VerdictLabel::NonVulnerable => {
                non_vulnerable += 1;
                next.accepted.insert(s.source_id.clone(), (Label::NonVulnerable, iteration));
            }
            VerdictLabel::Unknown => {
                next.unknown.insert(s.source_id.clone());
            }
        }
        scored.push(ScoredSample { id: s.source_id.clone(), scores: row, verdict });
    }
    let report = IterationReport {
        iteration,
        vulnerable,
        non_vulnerable,
        unknown: next.unknown.len(),
        val_losses: models.iter().map(|m| m.state.best_val_loss).collect(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(IterationOutput { models, pool: next, report, scored })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// The final iteration's models; these form the deployed committee.
    pub models: Vec<TrainedModel>,
    pub pool: LabeledPool,
    pub reports: Vec<IterationReport>,
    /// Scores from the final iteration.
    pub scored: Vec<ScoredSample>,
}

/// Chains `opts.iterations` rounds. `on_iteration` sees each round's output
/// before the next starts.
pub fn run_pipeline(
    data: &SelfTrainData,
    configs: &[ModelConfig],
    tc: &TrainConfig,
    opts: &SelfTrainOptions,
    mut on_iteration: impl FnMut(&IterationOutput),
) -> Result<PipelineOutput, SelfTrainError> {
    if opts.iterations == 0 {
        return Err(SelfTrainError::NoIterations);
    }
    let mut pool = LabeledPool::new(data);
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut last: Option<IterationOutput> = None;
    for iteration in 1..=opts.iterations {
        let warm: Option<Vec<ModelParams>> =
            if opts.warm_start { last.as_ref().map(|o| o.models.iter().map(|m| m.params.clone()).collect()) } else { None };
        let out = run_iteration(&pool, data, configs, tc, opts, iteration, warm.as_deref())?;
        on_iteration(&out);
        let before = pool.accepted.len() as f64;
        pool = out.pool.clone();
        reports.push(out.report.clone());
        let after = pool.accepted.len() as f64;
        last = Some(out);
        if let Some(eps) = opts.convergence {
            if iteration > 1 && (after - before).abs() < eps * before.max(1.0) {
                break;
            }
        }
    }
    let last = last.expect("at least one iteration");
    Ok(PipelineOutput { models: last.models, pool, reports, scored: last.scored })
}
