//! Corpus ingestion, function-level deduplication, stratified splitting and
//! pool exclusion.
//!
//! Corpus rows carry `contract_address`, `function_name_or_selector`,
//! `runtime_bytecode_hex` and `label` (`1`, `0` or empty), as CSV with a
//! header or as JSON lines. An optional `duplicate_count` column lets
//! deduplicated output be re-ingested without losing multiplicities.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cfg::{build_contract_cfg, FunctionCfg, Selector};
use crate::disasm::{self, content_hash};
use crate::exploit::abi::selector_of;
use crate::features::{encode_graph, EncoderConfig, GraphSample, Label};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("UnreadableFile: {path}: {reason}")]
    UnreadableFile { path: String, reason: String },
    #[error("SchemaViolation at row {row}: {reason}")]
    SchemaViolation { row: usize, reason: String },
    #[error("conflicting labels for function {id}")]
    ConflictingLabels { id: String },
    #[error("UnlabeledRecord: {0}")]
    UnlabeledRecord(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    /// Hash of the function's instruction bytes after CFG slicing.
    #[default]
    FunctionBytes,
    /// Hash of the whole runtime bytecode plus the selector.
    RawBytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub contract_address: Option<String>,
    pub selector: Selector,
    /// The row's function name when it gave a signature instead of a selector.
    pub name: Option<String>,
    /// Runtime bytecode of the first contract the function was seen in.
    #[serde(with = "hex_bytes")]
    pub bytecode: Vec<u8>,
    pub label: Option<Label>,
    pub duplicate_count: usize,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(bytes)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        crate::disasm::parse_hex(&text).map_err(serde::de::Error::custom)
    }
}

pub trait Identified {
    fn id(&self) -> &str;
}

pub trait Labeled: Identified {
    fn label(&self) -> Option<Label>;
}

impl Identified for FunctionRecord {
    fn id(&self) -> &str {
        &self.id
    }
}

impl Labeled for FunctionRecord {
    fn label(&self) -> Option<Label> {
        self.label
    }
}

impl Identified for String {
    fn id(&self) -> &str {
        self
    }
}

impl Identified for GraphSample {
    fn id(&self) -> &str {
        &self.source_id
    }
}

impl Labeled for GraphSample {
    fn label(&self) -> Option<Label> {
        self.label
    }
}

/// One corpus row before CFG work.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub contract_address: Option<String>,
    pub function: String,
    pub bytecode_hex: String,
    pub label: Option<Label>,
    pub duplicate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub records: Vec<FunctionRecord>,
    pub rows_read: usize,
    /// Rows whose content could not be turned into a function.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl IngestReport {
    pub fn vulnerable_count(&self) -> usize {
        self.records.iter().filter(|r| r.label == Some(Label::Vulnerable)).count()
    }
}

/// Resolves a row's function column: a 4-byte selector in hex, `FALLBACK`,
/// or a signature such as `withdraw(uint256)`. A bare name is read as a
/// zero-argument signature.
pub fn parse_function_ref(text: &str) -> Option<(Selector, Option<String>)> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    if let Some(sel) = Selector::from_hex(text) {
        return Some((sel, None));
    }
    if text.eq_ignore_ascii_case("fallback") || text.eq_ignore_ascii_case("fallback()") {
        return Some((Selector::Fallback, None));
    }
    let signature = if text.contains('(') { text.replace(' ', "") } else { format!("{text}()") };
    if !signature.ends_with(')') || signature.starts_with('(') {
        return None;
    }
    Some((Selector::Fixed(selector_of(&signature)), Some(signature)))
}

fn parse_label(text: &str) -> Result<Option<Label>, String> {
    match text.trim() {
        "" => Ok(None),
        "1" => Ok(Some(Label::Vulnerable)),
        "0" => Ok(Some(Label::NonVulnerable)),
        other => Err(format!("label {other:?} is not 1, 0 or empty")),
    }
}

const REQUIRED: [&str; 3] = ["contract_address", "function_name_or_selector", "runtime_bytecode_hex"];

fn read_csv_rows<R: Read>(input: R) -> Result<Vec<Result<RawRow, (usize, String)>>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::SchemaViolation { row: 0, reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = Vec::new();
    for name in REQUIRED {
        idx.push(col(name).ok_or_else(|| DatasetError::SchemaViolation {
            row: 0,
            reason: format!("missing column {name}"),
        })?);
    }
    let label_col = col("label");
    let dup_col = col("duplicate_count");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DatasetError::SchemaViolation { row, reason: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let label = match label_col.map(&field).as_deref().map(parse_label).transpose() {
            Ok(l) => l.flatten(),
            Err(e) => {
                out.push(Err((row, e)));
                continue;
            }
        };
        let duplicate_count = match dup_col.map(&field) {
            None => 1,
            Some(t) if t.trim().is_empty() => 1,
            Some(t) => match t.trim().parse::<usize>() {
                Ok(n) if n >= 1 => n,
                _ => {
                    out.push(Err((row, format!("duplicate_count {t:?}"))));
                    continue;
                }
            },
        };
        let address = field(idx[0]);
        out.push(Ok(RawRow {
            contract_address: (!address.trim().is_empty()).then(|| address.trim().to_string()),
            function: field(idx[1]),
            bytecode_hex: field(idx[2]),
            label,
            duplicate_count,
        }));
    }
    Ok(out)
}

fn json_field_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(if *b { "1" } else { "0" }.to_string()),
        _ => None,
    }
}

fn read_jsonl_rows<R: BufRead>(input: R) -> Result<Vec<Result<RawRow, (usize, String)>>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| DatasetError::SchemaViolation { row, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| DatasetError::SchemaViolation { row, reason: e.to_string() })?;
        let obj = value
            .as_object()
            .ok_or_else(|| DatasetError::SchemaViolation { row, reason: "line is not an object".into() })?;
        let mut fields = Vec::new();
        for name in REQUIRED {
            let v = obj.get(name).ok_or_else(|| DatasetError::SchemaViolation {
                row,
                reason: format!("missing key {name}"),
            })?;
            fields.push(json_field_text(v).ok_or_else(|| DatasetError::SchemaViolation {
                row,
                reason: format!("{name} must be a string"),
            })?);
        }
        let label = match obj.get("label").map(json_field_text) {
            None => Ok(None),
            Some(None) => Err("label must be a scalar".to_string()),
            Some(Some(t)) => parse_label(&t),
        };
        let label = match label {
            Ok(l) => l,
            Err(e) => {
                out.push(Err((row, e)));
                continue;
            }
        };
        let duplicate_count = match obj.get("duplicate_count") {
            None | Some(Value::Null) => 1,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => n as usize,
                _ => {
                    out.push(Err((row, format!("duplicate_count {v}"))));
                    continue;
                }
            },
        };
        let address = fields[0].trim().to_string();
        out.push(Ok(RawRow {
            contract_address: (!address.is_empty()).then_some(address),
            function: fields[1].clone(),
            bytecode_hex: fields[2].clone(),
            label,
            duplicate_count,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    JsonLines,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => CorpusFormat::JsonLines,
            _ => CorpusFormat::Csv,
        }
    }
}

/// Slices the row's function out of its contract.
fn row_function(row: &RawRow) -> Result<(Vec<u8>, FunctionCfg, Option<String>), String> {
    let bytes = disasm::parse_hex(&row.bytecode_hex).map_err(|e| e.to_string())?;
    let (selector, name) =
        parse_function_ref(&row.function).ok_or_else(|| format!("bad function reference {:?}", row.function))?;
    let fcfg = function_cfg(&bytes, selector)?;
    Ok((bytes, fcfg, name))
}

/// The CFG of one function of a contract.
pub fn function_cfg(bytecode: &[u8], selector: Selector) -> Result<FunctionCfg, String> {
    let stream = disasm::decode(bytecode).map_err(|e| e.to_string())?;
    let contract = build_contract_cfg(&stream, None);
    contract
        .function(selector)
        .cloned()
        .ok_or_else(|| format!("selector {selector} not found in contract"))
}

pub fn record_id(mode: DedupMode, bytecode: &[u8], fcfg: &FunctionCfg) -> String {
    match mode {
        DedupMode::FunctionBytes => content_hash(&fcfg.canonical_bytes()),
        DedupMode::RawBytes => {
            let mut key = bytecode.to_vec();
            match fcfg.selector {
                Selector::Fixed(s) => key.extend_from_slice(&s),
                Selector::Fallback => key.extend_from_slice(b"FALLBACK"),
            }
            content_hash(&key)
        }
    }
}

/// Collapses rows into deduplicated records, first occurrence first.
pub fn ingest_rows(
    rows: Vec<Result<RawRow, (usize, String)>>,
    mode: DedupMode,
) -> Result<IngestReport, DatasetError> {
    let mut report = IngestReport::default();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for row in rows {
        report.rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err((n, reason)) => {
                report.skipped += 1;
                report.warnings.push(format!("row {n}: {reason}"));
                continue;
            }
        };
        let (bytes, fcfg, name) = match row_function(&row) {
            Ok(parts) => parts,
            Err(reason) => {
                report.skipped += 1;
                report.warnings.push(format!("row {}: {reason}", report.rows_read));
                continue;
            }
        };
        let id = record_id(mode, &bytes, &fcfg);
        match by_id.get(&id) {
            Some(&i) => {
                let existing = &mut report.records[i];
                match (existing.label, row.label) {
                    (Some(a), Some(b)) if a != b => return Err(DatasetError::ConflictingLabels { id }),
                    (None, Some(b)) => existing.label = Some(b),
                    _ => {}
                }
                existing.duplicate_count += row.duplicate_count;
            }
            None => {
                by_id.insert(id.clone(), report.records.len());
                report.records.push(FunctionRecord {
                    id,
                    contract_address: row.contract_address,
                    selector: fcfg.selector,
                    name,
                    bytecode: bytes,
                    label: row.label,
                    duplicate_count: row.duplicate_count,
                });
            }
        }
    }
    Ok(report)
}

pub fn read_rows<R: Read>(input: R, format: CorpusFormat) -> Result<Vec<Result<RawRow, (usize, String)>>, DatasetError> {
    match format {
        CorpusFormat::Csv => read_csv_rows(input),
        CorpusFormat::JsonLines => read_jsonl_rows(BufReader::new(input)),
    }
}

/// Ingests corpus files in order; later files extend and deduplicate into
/// earlier ones.
pub fn ingest(paths: &[&Path], mode: DedupMode) -> Result<IngestReport, DatasetError> {
    let mut rows = Vec::new();
    for path in paths {
        let file = File::open(path).map_err(|e| DatasetError::UnreadableFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        rows.extend(read_rows(file, CorpusFormat::from_path(path))?);
    }
    ingest_rows(rows, mode)
}

/// Writes records back as corpus CSV, selectors in hex.
pub fn write_corpus<W: Write>(records: &[FunctionRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["contract_address", "function_name_or_selector", "runtime_bytecode_hex", "label", "duplicate_count"])?;
    for r in records {
        let label = match r.label {
            Some(Label::Vulnerable) => "1",
            Some(Label::NonVulnerable) => "0",
            None => "",
        };
        w.write_record([
            r.contract_address.clone().unwrap_or_default(),
            r.selector.to_string(),
            format!("0x{}", hex::encode(&r.bytecode)),
            label.to_string(),
            r.duplicate_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl FunctionRecord {
    /// Encodes the record's function as a graph sample keyed by its id.
    pub fn to_sample(&self, enc: &EncoderConfig) -> Result<GraphSample, DatasetError> {
        let fcfg = function_cfg(&self.bytecode, self.selector)
            .map_err(|reason| DatasetError::BadRecord { id: self.id.clone(), reason })?;
        let mut sample = encode_graph(&fcfg, enc);
        sample.label = self.label;
        sample.source_id = self.id.clone();
        Ok(sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of records assigned to the study half.
    pub ratio: f64,
    /// Exact study-half size; overrides `ratio` when set.
    pub study_size: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratio: 0.5, study_size: None, seed: 0 }
    }
}

/// Largest-remainder apportionment of `total` across classes of the given
/// sizes. Ties go to the earlier class.
fn apportion(class_sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    if n == 0 {
        return vec![0; class_sizes.len()];
    }
    let mut quotas: Vec<usize> = class_sizes.iter().map(|&c| c * total / n).collect();
    let mut remainders: Vec<(usize, usize)> =
        class_sizes.iter().enumerate().map(|(i, &c)| (c * total % n, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - quotas.iter().sum::<usize>();
    for (_, i) in remainders {
        if left == 0 {
            break;
        }
        if quotas[i] < class_sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Splits labeled records into (study, test), preserving class proportions.
/// The assignment depends only on the record ids, labels and seed.
pub fn stratified_split<T: Labeled + Clone>(records: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if let Some(r) = records.iter().find(|r| r.label().is_none()) {
        return Err(DatasetError::UnlabeledRecord(r.id().to_string()));
    }
    let n = records.len();
    let study_total = match spec.study_size {
        Some(s) if s > n => return Err(DatasetError::InvalidSplit(format!("study size {s} exceeds {n} records"))),
        Some(s) => s,
        None => {
            if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
                return Err(DatasetError::InvalidSplit(format!("ratio {} outside (0, 1)", spec.ratio)));
            }
            (spec.ratio * n as f64).round() as usize
        }
    };
    let classes = [Label::Vulnerable, Label::NonVulnerable];
    let mut members: Vec<Vec<&T>> = classes
        .iter()
        .map(|c| records.iter().filter(|r| r.label() == Some(*c)).collect())
        .collect();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, study_total);
    let mut study = Vec::with_capacity(study_total);
    let mut test = Vec::with_capacity(n - study_total);
    for (k, group) in members.iter_mut().enumerate() {
        group.sort_by(|a, b| a.id().cmp(b.id()));
        let mut rng = seed::rng(spec.seed, &[seed::DOMAIN_SPLIT, k as u64]);
        group.shuffle(&mut rng);
        for (i, r) in group.iter().enumerate() {
            if i < quotas[k] {
                study.push((*r).clone());
            } else {
                test.push((*r).clone());
            }
        }
    }
    Ok((study, test))
}

/// Drops every pool entry whose id is in `trusted`.
pub fn exclude<T: Identified + Clone, U: Identified>(pool: &[T], trusted: &[U]) -> Vec<T> {
    let ids: HashSet<&str> = trusted.iter().map(Identified::id).collect();
    pool.iter().filter(|p| !ids.contains(p.id())).cloned().collect()
}

pub fn write_id_list<T: Identified, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        writeln!(out, "{}", item.id())?;
    }
    Ok(())
}

pub fn read_id_list<R: BufRead>(input: R) -> std::io::Result<Vec<String>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| l.map(|s| s.trim().to_string()))
        .collect()
}
