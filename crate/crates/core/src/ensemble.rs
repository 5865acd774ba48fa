//! A trained committee on disk: one checkpoint per model plus a manifest
//! recording the encoder and voting settings used at training time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::{build_contract_cfg, Selector};
use crate::committee::{Committee, Verdict};
use crate::disasm::{self, DecodeError};
use crate::features::{encode_graph, EncoderConfig, GraphSample};
use crate::gnn::{Checkpoint, GnnError, ModelConfig, ModelParams};
use crate::selftrain::score_pool;
use crate::train::TrainedModel;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "scools-ensemble";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("MissingCheckpoint: expected {expected} models, found {found}{}", missing_suffix(.missing))]
    MissingCheckpoint { expected: usize, found: usize, missing: Vec<String> },
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: String, reason: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

fn missing_suffix(missing: &[String]) -> String {
    if missing.is_empty() {
        String::new()
    } else {
        format!(" (missing {})", missing.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub config: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub ensemble_size: usize,
    pub encoder: EncoderConfig,
    pub committee: Committee,
    pub models: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub encoder: EncoderConfig,
    pub committee: Committee,
    pub models: Vec<(ModelConfig, ModelParams, u64)>,
}

fn io_err(path: &Path, e: impl ToString) -> EnsembleError {
    EnsembleError::Io { path: path.display().to_string(), reason: e.to_string() }
}

impl Ensemble {
    pub fn from_trained(encoder: EncoderConfig, committee: Committee, models: &[TrainedModel]) -> Self {
        Ensemble { encoder, committee, models: models.iter().map(|m| (m.config, m.params.clone(), m.seed)).collect() }
    }

    pub fn size(&self) -> usize {
        self.models.len()
    }

    pub fn save(&self, dir: &Path) -> Result<(), EnsembleError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut entries = Vec::with_capacity(self.models.len());
        for (i, (config, params, seed)) in self.models.iter().enumerate() {
            let file = format!("model-{i:03}.json");
            Checkpoint::new(*config, *seed, params).save(&dir.join(&file))?;
            entries.push(ManifestEntry { file, config: config.to_string(), seed: *seed });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            ensemble_size: self.models.len(),
            encoder: self.encoder,
            committee: self.committee,
            models: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    /// Loads every checkpoint named by the manifest. `expected` is the
    /// committee size the caller requires; any shortfall is an error.
    pub fn load(dir: &Path, expected: Option<usize>) -> Result<Self, EnsembleError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|_| EnsembleError::MissingCheckpoint {
            expected: expected.unwrap_or(0),
            found: 0,
            missing: vec![MANIFEST_FILE.into()],
        })?;
        let bad = |reason: String| EnsembleError::BadManifest { path: path.display().to_string(), reason };
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        let want = expected.unwrap_or(manifest.ensemble_size).max(manifest.ensemble_size);
        let present: Vec<&ManifestEntry> = manifest.models.iter().filter(|m| dir.join(&m.file).is_file()).collect();
        let missing: Vec<String> =
            manifest.models.iter().filter(|m| !dir.join(&m.file).is_file()).map(|m| m.file.clone()).collect();
        if present.len() < want || !missing.is_empty() {
            return Err(EnsembleError::MissingCheckpoint { expected: want, found: present.len(), missing });
        }
        let mut models = Vec::with_capacity(present.len());
        for entry in present {
            let ckpt = Checkpoint::load(&dir.join(&entry.file))?;
            if ckpt.config.input_dim != manifest.encoder.dim {
                return Err(bad(format!("{} expects input dim {}, encoder gives {}", entry.file, ckpt.config.input_dim, manifest.encoder.dim)));
            }
            models.push((ckpt.config, ckpt.to_params()?, ckpt.seed));
        }
        Ok(Ensemble { encoder: manifest.encoder, committee: manifest.committee, models })
    }

    /// Per-model scores and the committee verdict for each sample.
    pub fn classify(&self, samples: &[GraphSample], jobs: usize) -> Result<Vec<(Vec<f64>, Verdict)>, GnnError> {
        let refs: Vec<(&ModelConfig, &ModelParams)> = self.models.iter().map(|(c, p, _)| (c, p)).collect();
        let rows = score_pool(&refs, samples, jobs)?;
        Ok(rows
            .into_iter()
            .map(|scores| {
                let v = self.committee.classify(&scores);
                (scores, v)
            })
            .collect())
    }
}

/// One analyzed function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionVerdict {
    pub id: String,
    pub selector: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub verdict: Verdict,
    /// Feature extraction plus committee inference for this function.
    pub seconds: f64,
}

/// Splits a contract into functions and runs the committee on each.
pub fn analyze_bytecode(ensemble: &Ensemble, bytecode: &[u8], jobs: usize) -> Result<Vec<FunctionVerdict>, EnsembleError> {
    let stream = disasm::decode(bytecode)?;
    let contract = build_contract_cfg(&stream, None);
    let mut out = Vec::with_capacity(contract.functions.len());
    for f in &contract.functions {
        let start = Instant::now();
        let sample = encode_graph(f, &ensemble.encoder);
        let (_, verdict) = ensemble.classify(std::slice::from_ref(&sample), jobs)?.remove(0);
        out.push(FunctionVerdict {
            id: f.selector.to_string(),
            selector: Some(f.selector),
            name: f.name.clone(),
            verdict,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Runs the committee on pre-encoded samples, timing each one.
pub fn analyze_samples(ensemble: &Ensemble, samples: &[GraphSample], jobs: usize) -> Result<Vec<FunctionVerdict>, EnsembleError> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let start = Instant::now();
        let (_, verdict) = ensemble.classify(std::slice::from_ref(s), jobs)?.remove(0);
        out.push(FunctionVerdict {
            id: s.source_id.clone(),
            selector: None,
            name: None,
            verdict,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Files a saved ensemble consists of, manifest first.
pub fn ensemble_files(dir: &Path) -> Result<Vec<PathBuf>, EnsembleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| EnsembleError::BadManifest { path: path.display().to_string(), reason: e.to_string() })?;
    Ok(std::iter::once(path).chain(manifest.models.iter().map(|m| dir.join(&m.file))).collect())
}
