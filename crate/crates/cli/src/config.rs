//! Effective run configuration. Layers, lowest first: preset defaults, the
//! key=value config file, `SCOOLS_*` environment variables, `--set` pairs
//! and dedicated flags.

use std::fmt::Write as _;

use scools_core::committee::{Committee, Threshold};
use scools_core::dataset::{DedupMode, SplitSpec};
use scools_core::features::EncoderConfig;
use scools_core::gnn::{ConvKind, ModelConfig, Pooling, LEGAL_LAYERS, LEGAL_WIDTHS};
use scools_core::selftrain::{SelfTrainOptions, Validation};
use scools_core::sim::{AttackParams, MAX_CALL_DEPTH, WEI_PER_ETHER};
use scools_core::train::{enumerate_grid_restricted, TrainConfig};

pub const ENV_PREFIX: &str = "SCOOLS_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn parse(text: &str) -> Result<Preset, String> {
        match text.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub jobs: usize,
    pub train: TrainConfig,
    pub conv_kinds: Vec<ConvKind>,
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub poolings: Vec<Pooling>,
    pub committee: Committee,
    pub iterations: usize,
    pub validation: Validation,
    pub pseudo_weight: f64,
    pub warm_start: bool,
    pub convergence: Option<f64>,
    pub encoder: EncoderConfig,
    pub dedup: DedupMode,
    pub split_ratio: f64,
    pub study_size: Option<usize>,
    pub amount_wei: u128,
    pub deposit_wei: u128,
    pub wallet_wei: u128,
    pub max_depth: u32,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        let base = RunConfig {
            preset,
            seed: 0,
            jobs: default_jobs(),
            train: TrainConfig::default(),
            conv_kinds: ConvKind::ALL.to_vec(),
            layers: LEGAL_LAYERS.to_vec(),
            widths: LEGAL_WIDTHS.to_vec(),
            poolings: Pooling::ALL.to_vec(),
            committee: Committee::default(),
            iterations: 3,
            validation: Validation::Holdout(0.2),
            pseudo_weight: 1.0,
            warm_start: false,
            convergence: None,
            encoder: EncoderConfig::default(),
            dedup: DedupMode::FunctionBytes,
            split_ratio: 0.5,
            study_size: None,
            amount_wei: WEI_PER_ETHER,
            deposit_wei: WEI_PER_ETHER,
            wallet_wei: 100 * WEI_PER_ETHER,
            max_depth: MAX_CALL_DEPTH,
        };
        match preset {
            Preset::Paper => base,
            Preset::Desk => RunConfig {
                conv_kinds: vec![ConvKind::Gcn, ConvKind::Gin],
                widths: vec![32],
                train: TrainConfig { max_epochs: 300, patience_window: 50, ..base.train },
                ..base
            },
        }
    }

    pub fn ensemble_size(&self) -> usize {
        self.conv_kinds.len() * self.layers.len() * self.widths.len() * self.poolings.len()
    }

    pub fn grid(&self, input_dim: usize) -> Vec<ModelConfig> {
        enumerate_grid_restricted(input_dim, &self.conv_kinds, &self.layers, &self.widths, &self.poolings)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn selftrain_options(&self) -> SelfTrainOptions {
        SelfTrainOptions {
            iterations: self.iterations,
            committee: self.committee,
            validation: self.validation,
            pseudo_weight: self.pseudo_weight,
            warm_start: self.warm_start,
            convergence: self.convergence,
            jobs: self.jobs,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { ratio: self.split_ratio, study_size: self.study_size, seed: self.seed }
    }

    pub fn attack_params(&self) -> AttackParams {
        AttackParams {
            deposit_wei: self.deposit_wei,
            threshold_wei: self.amount_wei,
            wallet_wei: self.wallet_wei,
            max_depth: self.max_depth,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let v = value.trim();
        let num = |what: &str| -> String { format!("{key}: {what} expected, got {v:?}") };
        match key.as_str() {
            "preset" => {
                let p = Preset::parse(v)?;
                if p != self.preset {
                    return Err(format!("preset {} must be chosen before other settings", p.name()));
                }
            }
            "seed" => self.seed = v.parse().map_err(|_| num("integer"))?,
            "jobs" => {
                self.jobs = v.parse().map_err(|_| num("integer"))?;
                if self.jobs == 0 {
                    self.jobs = default_jobs();
                }
            }
            "learning_rate" => self.train.learning_rate = v.parse().map_err(|_| num("number"))?,
            "batch_size" => self.train.batch_size = v.parse().map_err(|_| num("integer"))?,
            "max_epochs" => self.train.max_epochs = v.parse().map_err(|_| num("integer"))?,
            "patience" => self.train.patience_window = v.parse().map_err(|_| num("integer"))?,
            "class_weighting" => self.train.class_weighting = parse_bool(v).ok_or_else(|| num("boolean"))?,
            "conv_kinds" => {
                self.conv_kinds = list(v, |s| ConvKind::parse(s).ok_or_else(|| format!("unknown conv kind {s:?}")))?
            }
            "layers" => self.layers = list(v, |s| s.parse().map_err(|_| num("integer list")))?,
            "widths" => self.widths = list(v, |s| s.parse().map_err(|_| num("integer list")))?,
            "poolings" => {
                self.poolings = list(v, |s| match s.to_ascii_lowercase().as_str() {
                    "average" | "avg" | "mean" => Ok(Pooling::Average),
                    "sum" => Ok(Pooling::Sum),
                    _ => Err(format!("unknown pooling {s:?}")),
                })?
            }
            "low_band" => self.committee.low_band = v.parse().map_err(|_| num("number"))?,
            "high_band" => self.committee.high_band = v.parse().map_err(|_| num("number"))?,
            "threshold" => {
                self.committee.threshold = match v {
                    "absolute" => Threshold::Absolute,
                    "surviving" => Threshold::Surviving,
                    _ => return Err(format!("threshold: absolute or surviving expected, got {v:?}")),
                }
            }
            "iterations" => self.iterations = v.parse().map_err(|_| num("integer"))?,
            "validation" => {
                self.validation = match v.split_once(':') {
                    _ if v == "trusted" => Validation::Trusted,
                    Some(("holdout", f)) => Validation::Holdout(f.parse().map_err(|_| num("holdout:<fraction>"))?),
                    _ if v == "holdout" => Validation::Holdout(0.2),
                    _ => return Err(format!("validation: holdout[:fraction] or trusted expected, got {v:?}")),
                }
            }
            "pseudo_weight" => self.pseudo_weight = v.parse().map_err(|_| num("number"))?,
            "warm_start" => self.warm_start = parse_bool(v).ok_or_else(|| num("boolean"))?,
            "convergence" => {
                self.convergence = if v == "none" { None } else { Some(v.parse().map_err(|_| num("number or none"))?) }
            }
            "encoder_dim" => self.encoder.dim = v.parse().map_err(|_| num("integer"))?,
            "ngram_max" => self.encoder.ngram_max = v.parse().map_err(|_| num("integer"))?,
            "positional_decay" => self.encoder.positional_decay = v.parse().map_err(|_| num("number"))?,
            "hash_seed" => self.encoder.hash_seed = v.parse().map_err(|_| num("integer"))?,
            "dedup" => {
                self.dedup = match v {
                    "function_bytes" => DedupMode::FunctionBytes,
                    "raw_bytes" => DedupMode::RawBytes,
                    _ => return Err(format!("dedup: function_bytes or raw_bytes expected, got {v:?}")),
                }
            }
            "split_ratio" => self.split_ratio = v.parse().map_err(|_| num("number"))?,
            "study_size" => {
                self.study_size = if v == "none" { None } else { Some(v.parse().map_err(|_| num("integer or none"))?) }
            }
            "amount_wei" => self.amount_wei = v.parse().map_err(|_| num("integer"))?,
            "deposit_wei" => self.deposit_wei = v.parse().map_err(|_| num("integer"))?,
            "wallet_wei" => self.wallet_wei = v.parse().map_err(|_| num("integer"))?,
            "max_depth" => self.max_depth = v.parse().map_err(|_| num("integer"))?,
            _ => return Err(format!("unknown setting {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train_config().validate().map_err(|e| e.to_string())?;
        self.encoder.validate().map_err(|e| e.to_string())?;
        if !self.committee.is_valid() {
            return Err(format!("bands must satisfy 0 < low < high < 1, got {} and {}", self.committee.low_band, self.committee.high_band));
        }
        if self.ensemble_size() == 0 {
            return Err("empty model grid".into());
        }
        for c in self.grid(self.encoder.dim) {
            c.validate().map_err(|e| e.to_string())?;
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if let Validation::Holdout(f) = self.validation {
            if !(f > 0.0 && f < 1.0) {
                return Err(format!("holdout fraction {f} outside (0, 1)"));
            }
        }
        if !(self.pseudo_weight >= 0.0 && self.pseudo_weight.is_finite()) {
            return Err(format!("pseudo_weight {} must be non-negative", self.pseudo_weight));
        }
        Ok(())
    }

    /// `key=value` lines; feeding them back through [`RunConfig::set`]
    /// reproduces this config.
    pub fn render(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("preset", self.preset.name().into());
        kv("seed", self.seed.to_string());
        kv("jobs", self.jobs.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("max_epochs", self.train.max_epochs.to_string());
        kv("patience", self.train.patience_window.to_string());
        kv("class_weighting", self.train.class_weighting.to_string());
        kv("conv_kinds", join(self.conv_kinds.iter().map(|k| k.name().to_string()).collect()));
        kv("layers", join(self.layers.iter().map(usize::to_string).collect()));
        kv("widths", join(self.widths.iter().map(usize::to_string).collect()));
        kv("poolings", join(self.poolings.iter().map(Pooling::to_string).collect()));
        kv("ensemble_size", self.ensemble_size().to_string());
        kv("low_band", self.committee.low_band.to_string());
        kv("high_band", self.committee.high_band.to_string());
        kv(
            "threshold",
            match self.committee.threshold {
                Threshold::Absolute => "absolute",
                Threshold::Surviving => "surviving",
            }
            .into(),
        );
        kv("iterations", self.iterations.to_string());
        kv(
            "validation",
            match self.validation {
                Validation::Holdout(f) => format!("holdout:{f}"),
                Validation::Trusted => "trusted".into(),
            },
        );
        kv("pseudo_weight", self.pseudo_weight.to_string());
        kv("warm_start", self.warm_start.to_string());
        kv("convergence", self.convergence.map_or("none".into(), |c| c.to_string()));
        kv("encoder_dim", self.encoder.dim.to_string());
        kv("ngram_max", self.encoder.ngram_max.to_string());
        kv("positional_decay", self.encoder.positional_decay.to_string());
        kv("hash_seed", self.encoder.hash_seed.to_string());
        kv(
            "dedup",
            match self.dedup {
                DedupMode::FunctionBytes => "function_bytes",
                DedupMode::RawBytes => "raw_bytes",
            }
            .into(),
        );
        kv("split_ratio", self.split_ratio.to_string());
        kv("study_size", self.study_size.map_or("none".into(), |n| n.to_string()));
        kv("amount_wei", self.amount_wei.to_string());
        kv("deposit_wei", self.deposit_wei.to_string());
        kv("wallet_wei", self.wallet_wei.to_string());
        kv("max_depth", self.max_depth.to_string());
        s
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

/// Parses `key = value` lines. `#` starts a comment; `[section]` headers
/// and quotes around values are tolerated.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let v = v.trim().trim_matches('"');
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

/// `SCOOLS_*` variables as settings, skipping `SCOOLS_CONFIG`.
pub fn env_settings(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            (key != "config" && key != "preset").then_some((key, v))
        })
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let c = RunConfig::preset(Preset::Paper);
        assert_eq!(c.train.learning_rate, 0.005);
        assert_eq!(c.train.batch_size, 2048);
        assert_eq!(c.train.max_epochs, 1000);
        assert_eq!(c.train.patience_window, 200);
        assert_eq!(c.ensemble_size(), 120);
        assert_eq!((c.committee.low_band, c.committee.high_band), (0.1, 0.9));
        assert_eq!(c.iterations, 3);
        assert_eq!(RunConfig::preset(Preset::Desk).ensemble_size(), 12);
        c.validate().unwrap();
        RunConfig::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::preset(Preset::Desk);
        c.set("validation", "trusted").unwrap();
        c.set("convergence", "0.001").unwrap();
        c.set("study_size", "250").unwrap();
        let mut back = RunConfig::preset(Preset::Desk);
        for (k, v) in parse_config_file(&c.render()).unwrap() {
            if k != "ensemble_size" {
                back.set(&k, &v).unwrap();
            }
        }
        assert_eq!(back, c);
    }

    #[test]
    fn bad_settings() {
        let mut c = RunConfig::preset(Preset::Paper);
        assert!(c.set("learning_rat", "1").is_err());
        assert!(c.set("batch_size", "many").is_err());
        assert!(c.set("conv_kinds", "gcn,cnn").is_err());
        assert!(c.set("preset", "desk").is_err());
        c.set("low_band", "0.95").unwrap();
        assert!(c.validate().is_err());
        assert!(parse_config_file("seed 3").is_err());
    }

    #[test]
    fn config_file_and_env() {
        let kv = parse_config_file("# comment\n[train]\nlearning_rate = 0.01\nconv_kinds = \"gcn,gin\"\n").unwrap();
        assert_eq!(kv, [("learning_rate".into(), "0.01".into()), ("conv_kinds".into(), "gcn,gin".into())]);
        let env = env_settings(
            [("SCOOLS_SEED".to_string(), "9".to_string()), ("HOME".into(), "/".into()), ("SCOOLS_CONFIG".into(), "x".into())]
                .into_iter(),
        );
        assert_eq!(env, [("seed".to_string(), "9".to_string())]);
    }
}
