//! Node-to-vector encoding of block sentences and per-function graph samples.
//!
//! The default encoder is a signed feature-hashing bag of token n-grams.
//! Each n-gram starting at token position `i` contributes
//! `positional_decay^i` to one bucket, so earlier opcodes dominate and
//! reordering changes the vector. Vectors are L2-normalized.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::FunctionCfg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("MissingSentence: no vector for {0:?}")]
    MissingSentence(String),
    #[error("DimMismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid graph sample: {0}")]
    InvalidSample(String),
    #[error("malformed JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonVulnerable,
    Vulnerable,
}

impl Label {
    pub fn as_target(self) -> f64 {
        match self {
            Label::Vulnerable => 1.0,
            Label::NonVulnerable => 0.0,
        }
    }

    pub fn from_bit(bit: bool) -> Label {
        if bit {
            Label::Vulnerable
        } else {
            Label::NonVulnerable
        }
    }

    pub fn is_vulnerable(self) -> bool {
        self == Label::Vulnerable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram_max: usize,
    pub positional_decay: f64,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 512, ngram_max: 3, positional_decay: 0.9, hash_seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.dim < 8 {
            return Err(FeatureError::InvalidConfig(format!("dim {} < 8", self.dim)));
        }
        if self.ngram_max == 0 {
            return Err(FeatureError::InvalidConfig("ngram_max must be >= 1".into()));
        }
        if !(self.positional_decay > 0.0 && self.positional_decay <= 1.0) {
            return Err(FeatureError::InvalidConfig(format!(
                "positional_decay {} outside (0, 1]",
                self.positional_decay
            )));
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the seed's little-endian bytes followed by `text`.
pub fn seeded_fnv1a(seed: u64, text: &str) -> u64 {
    let mut hash = FNV_OFFSET;
    for byte in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Encodes one opcode sentence. The empty sentence maps to the zero vector.
pub fn encode_sentence(sentence: &str, cfg: &EncoderConfig) -> Vec<f64> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let mut values = vec![0.0f64; cfg.dim];
    let mut weight = 1.0f64;
    let mut gram = String::new();
    for start in 0..tokens.len() {
        gram.clear();
        for (n, token) in tokens[start..].iter().take(cfg.ngram_max).enumerate() {
            if n > 0 {
                gram.push(' ');
            }
            gram.push_str(token);
            let hash = seeded_fnv1a(cfg.hash_seed, &gram);
            let bucket = (hash % cfg.dim as u64) as usize;
            let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign * weight;
        }
        weight *= cfg.positional_decay;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    values
}

/// Node features plus directed edges for one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub n: usize,
    pub dim: usize,
    /// Row-major `n x dim` node features; row `i` belongs to block `i`.
    pub x: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
    pub label: Option<Label>,
    pub source_id: String,
}

impl GraphSample {
    pub fn new(
        n: usize,
        dim: usize,
        x: Vec<f64>,
        edges: Vec<(usize, usize)>,
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        let sample = GraphSample { n, dim, x, edges, label, source_id: source_id.into() };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.n == 0 {
            return Err(FeatureError::InvalidSample("graph has no nodes".into()));
        }
        if self.dim == 0 {
            return Err(FeatureError::InvalidSample("feature dimension is zero".into()));
        }
        if self.n.checked_mul(self.dim) != Some(self.x.len()) {
            return Err(FeatureError::InvalidSample(format!(
                "x has {} entries, expected {} x {}",
                self.x.len(),
                self.n,
                self.dim
            )));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|(a, b)| *a >= self.n || *b >= self.n) {
            return Err(FeatureError::InvalidSample(format!(
                "edge ({a}, {b}) out of range for {} nodes",
                self.n
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidSample("non-finite feature".into()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph samples always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let sample: GraphSample =
            serde_json::from_str(text).map_err(|e| FeatureError::Json(e.to_string()))?;
        sample.validate()?;
        Ok(sample)
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphSample {
        assert_eq!(perm.len(), self.n);
        let mut x = vec![0.0; self.x.len()];
        for (old, &new) in perm.iter().enumerate() {
            x[new * self.dim..(new + 1) * self.dim].copy_from_slice(self.row(old));
        }
        GraphSample {
            n: self.n,
            dim: self.dim,
            x,
            edges: self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }
}

/// Encodes every block of a function. Row order follows block order.
pub fn encode_graph(fcfg: &FunctionCfg, cfg: &EncoderConfig) -> GraphSample {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut x = Vec::with_capacity(fcfg.blocks.len() * cfg.dim);
    for block in &fcfg.blocks {
        let row = cache
            .entry(block.sentence.as_str())
            .or_insert_with(|| encode_sentence(&block.sentence, cfg));
        x.extend_from_slice(row);
    }
    GraphSample {
        n: fcfg.blocks.len(),
        dim: cfg.dim,
        x,
        edges: fcfg.edges(),
        label: None,
        source_id: fcfg.label(),
    }
}

/// Builds a sample from externally computed sentence vectors, verbatim.
pub fn import_external_vectors(
    fcfg: &FunctionCfg,
    table: &HashMap<String, Vec<f64>>,
) -> Result<GraphSample, FeatureError> {
    let mut dims = table.values().map(Vec::len);
    let dim = match dims.next() {
        Some(d) => d,
        None => {
            let missing = fcfg.blocks.first().map(|b| b.sentence.clone()).unwrap_or_default();
            return Err(FeatureError::MissingSentence(missing));
        }
    };
    if let Some(found) = dims.find(|d| *d != dim) {
        return Err(FeatureError::DimMismatch { expected: dim, found });
    }
    let mut x = Vec::with_capacity(fcfg.blocks.len() * dim);
    for block in &fcfg.blocks {
        let row = table
            .get(&block.sentence)
            .ok_or_else(|| FeatureError::MissingSentence(block.sentence.clone()))?;
        x.extend_from_slice(row);
    }
    GraphSample::new(fcfg.blocks.len(), dim, x, fcfg.edges(), None, fcfg.label())
}

/// Parses an external vector table: a JSON object mapping sentence to array.
pub fn parse_vector_table(text: &str) -> Result<HashMap<String, Vec<f64>>, FeatureError> {
    serde_json::from_str(text).map_err(|e| FeatureError::Json(e.to_string()))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
