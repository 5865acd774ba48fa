use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use scools_core::cfg::build_contract_cfg;
use scools_core::committee::VerdictLabel;
use scools_core::dataset::{self, stratified_split};
use scools_core::disasm::{self, DecodeError};
use scools_core::ensemble::{analyze_bytecode, analyze_samples, Ensemble, EnsembleError, FunctionVerdict};
use scools_core::exploit::{self, ExploitError};
use scools_core::features::{encode_graph, EncoderConfig, GraphSample};
use scools_core::metrics::{self, ConfusionCounts};
use scools_core::selftrain::{run_pipeline, write_reports_csv, IterationOutput, SelfTrainData, SelfTrainError};
use scools_core::sim::{self, VictimModel};
use scools_core::train::TrainedModel;

use scools_cli::config::RunConfig;
use crate::{AnalyzeArgs, CfgArgs, CliError, EvalArgs, ExploitArgs, FeaturizeArgs, SelftrainArgs, SimulateArgs, TableFormat, TrainArgs};

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("writing {}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

fn read_bytecode(path: &Path, binary: bool) -> Result<Vec<u8>, CliError> {
    if binary {
        fs::read(path).map_err(|e| input_err(path, e))
    } else {
        disasm::parse_hex(&read_text(path)?).map_err(|e| input_err(path, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| write_err(path, e))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| write_err(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_samples(path: &Path) -> Result<Vec<GraphSample>, CliError> {
    let file = File::open(path).map_err(|e| input_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| input_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(GraphSample::from_json(&line).map_err(|e| input_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

fn write_samples(path: &Path, samples: &[GraphSample]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for s in samples {
        writeln!(w, "{}", s.to_json()).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

fn decode_error(path: &Path, e: DecodeError) -> CliError {
    input_err(path, e)
}

pub fn cfg(a: &CfgArgs) -> Result<(), CliError> {
    let bytes = read_bytecode(&a.input, a.binary)?;
    let stream = disasm::decode(&bytes).map_err(|e| decode_error(&a.input, e))?;
    let names: Option<HashMap<[u8; 4], String>> = match &a.abi {
        Some(p) => {
            let abi = exploit::parse_abi(&read_text(p)?).map_err(|e| input_err(p, e))?;
            Some(abi.iter().map(|f| (f.selector(), f.signature())).collect())
        }
        None => None,
    };
    let contract = build_contract_cfg(&stream, names.as_ref());
    let text = if a.dot {
        contract.to_dot()
    } else {
        serde_json::to_string_pretty(&contract).map_err(|e| CliError::Internal(e.to_string()))? + "\n"
    };
    emit(a.output.as_deref(), &text)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("samples");
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn featurize(cfg: &RunConfig, a: &FeaturizeArgs) -> Result<(), CliError> {
    let enc: &EncoderConfig = &cfg.encoder;
    if let Some(path) = &a.bytecode {
        let stream = disasm::decode(&read_bytecode(path, false)?).map_err(|e| decode_error(path, e))?;
        let contract = build_contract_cfg(&stream, None);
        let samples: Vec<GraphSample> = contract
            .functions
            .iter()
            .map(|f| {
                let mut s = encode_graph(f, enc);
                s.source_id = f.selector.to_string();
                s
            })
            .collect();
        write_samples(&a.output, &samples)?;
        eprintln!("{} functions encoded", samples.len());
        return Ok(());
    }

    let paths: Vec<&Path> = a.corpus.iter().map(PathBuf::as_path).collect();
    let report = dataset::ingest(&paths, cfg.dedup).map_err(|e| CliError::Input(e.to_string()))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut records = report.records;
    if let Some(p) = &a.exclude {
        let ids = dataset::read_id_list(BufReader::new(File::open(p).map_err(|e| input_err(p, e))?))
            .map_err(|e| input_err(p, e))?;
        let before = records.len();
        records = dataset::exclude(&records, &ids);
        eprintln!("{} records excluded by {}", before - records.len(), p.display());
    }
    if let Some(p) = &a.corpus_out {
        dataset::write_corpus(&records, create(p)?).map_err(|e| write_err(p, e))?;
    }
    let samples = records
        .iter()
        .map(|r| r.to_sample(enc))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    write_samples(&a.output, &samples)?;
    eprintln!(
        "{} rows read, {} skipped, {} records ({} vulnerable)",
        report.rows_read,
        report.skipped,
        samples.len(),
        samples.iter().filter(|s| s.label.is_some_and(|l| l.is_vulnerable())).count()
    );
    if a.split {
        let (study, test) = stratified_split(&samples, &cfg.split_spec()).map_err(|e| CliError::Input(e.to_string()))?;
        for (name, part) in [("study", &study), ("test", &test)] {
            let path = sibling(&a.output, &format!("{name}.jsonl"));
            write_samples(&path, part)?;
            let ids = sibling(&a.output, &format!("{name}.ids"));
            dataset::write_id_list(part, create(&ids)?).map_err(|e| write_err(&ids, e))?;
            let positives = part.iter().filter(|s| s.label.is_some_and(|l| l.is_vulnerable())).count();
            eprintln!("{name}: {} records, {positives} vulnerable -> {}", part.len(), path.display());
        }
    }
    Ok(())
}

fn check_dims(cfg: &RunConfig, samples: &[GraphSample], path: &Path) -> Result<(), CliError> {
    if let Some(s) = samples.iter().find(|s| s.dim != cfg.encoder.dim) {
        return Err(input_err(path, format!("sample {} has dim {}, encoder_dim is {}", s.source_id, s.dim, cfg.encoder.dim)));
    }
    Ok(())
}

fn pipeline_error(e: SelfTrainError) -> CliError {
    match e {
        SelfTrainError::EmptyTrusted
        | SelfTrainError::UnlabeledTrusted(_)
        | SelfTrainError::ConflictingTrusted(_)
        | SelfTrainError::Split(_) => CliError::Input(e.to_string()),
        SelfTrainError::NoIterations | SelfTrainError::NoModels | SelfTrainError::InvalidCommittee => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Internal(e.to_string()),
    }
}

fn save_models(cfg: &RunConfig, dir: &Path, models: &[TrainedModel]) -> Result<(), CliError> {
    Ensemble::from_trained(cfg.encoder, cfg.committee, models)
        .save(dir)
        .map_err(|e| write_err(dir, e))?;
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).map_err(|e| write_err(&curves, e))?;
    for m in models {
        let path = curves.join(format!("model-{:03}.csv", m.index));
        m.state.write_curve_csv(create(&path)?).map_err(|e| write_err(&path, e))?;
    }
    Ok(())
}

fn print_report_line(out: &IterationOutput) {
    let r = &out.report;
    eprintln!(
        "iteration {}: {} vulnerable, {} non-vulnerable, {} unknown ({:.1}s)",
        r.iteration, r.vulnerable, r.non_vulnerable, r.unknown, r.wall_seconds
    );
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    let trusted = read_samples(&a.trusted)?;
    check_dims(cfg, &trusted, &a.trusted)?;
    let data = SelfTrainData::new(trusted, Vec::new()).map_err(pipeline_error)?;
    let opts = scools_core::selftrain::SelfTrainOptions { iterations: 1, ..cfg.selftrain_options() };
    let grid = cfg.grid(cfg.encoder.dim);
    eprintln!("training {} models on {} samples", grid.len(), data.trusted.len());
    let out = run_pipeline(&data, &grid, &cfg.train_config(), &opts, |_| {}).map_err(pipeline_error)?;
    save_models(cfg, &a.output, &out.models)?;
    let path = a.output.join("reports.csv");
    write_reports_csv(&out.reports, create(&path)?).map_err(|e| write_err(&path, e))?;
    for m in &out.models {
        println!("{}\tbest_epoch={}\tval_loss={:.6}", m.config, m.state.best_epoch, m.state.best_val_loss);
    }
    Ok(())
}

pub fn selftrain(cfg: &RunConfig, a: &SelftrainArgs) -> Result<(), CliError> {
    let trusted = read_samples(&a.trusted)?;
    let unlabeled = read_samples(&a.unlabeled)?;
    check_dims(cfg, &trusted, &a.trusted)?;
    check_dims(cfg, &unlabeled, &a.unlabeled)?;
    let data = SelfTrainData::new(trusted, unlabeled).map_err(pipeline_error)?;
    if !data.rejected.is_empty() {
        eprintln!("{} unlabeled samples already in the trusted set were dropped", data.rejected.len());
    }
    fs::create_dir_all(&a.output).map_err(|e| write_err(&a.output, e))?;
    let grid = cfg.grid(cfg.encoder.dim);
    let mut write_failure: Option<CliError> = None;
    let out = run_pipeline(&data, &grid, &cfg.train_config(), &cfg.selftrain_options(), |it| {
        print_report_line(it);
        let n = it.report.iteration;
        let result = (|| -> Result<(), CliError> {
            let pool = a.output.join(format!("pool-iter{n}.jsonl"));
            it.pool.write_snapshot(create(&pool)?).map_err(|e| write_err(&pool, e))?;
            let scores = a.output.join(format!("scores-iter{n}.jsonl"));
            let mut w = create(&scores)?;
            for s in &it.scored {
                serde_json::to_writer(&mut w, s).map_err(|e| write_err(&scores, e))?;
                w.write_all(b"\n").map_err(|e| write_err(&scores, e))?;
            }
            w.flush().map_err(|e| write_err(&scores, e))
        })();
        if let Err(e) = result {
            write_failure.get_or_insert(e);
        }
    })
    .map_err(pipeline_error)?;
    if let Some(e) = write_failure {
        return Err(e);
    }
    save_models(cfg, &a.output, &out.models)?;
    let path = a.output.join("reports.csv");
    write_reports_csv(&out.reports, create(&path)?).map_err(|e| write_err(&path, e))?;
    println!("{:<10} {:>10} {:>14} {:>8}", "iteration", "vulnerable", "non_vulnerable", "unknown");
    for r in &out.reports {
        println!("{:<10} {:>10} {:>14} {:>8}", r.iteration, r.vulnerable, r.non_vulnerable, r.unknown);
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig, a: &AnalyzeArgs) -> Result<(), CliError> {
    let ensemble = Ensemble::load(&a.checkpoints, a.expect_models).map_err(|e| match e {
        EnsembleError::Io { .. } | EnsembleError::Gnn(_) | EnsembleError::BadManifest { .. } | EnsembleError::MissingCheckpoint { .. } => {
            CliError::Input(e.to_string())
        }
        EnsembleError::Decode(_) => CliError::Internal(e.to_string()),
    })?;
    let is_samples = a.input.extension().is_some_and(|e| e == "jsonl");
    let lines: Vec<FunctionVerdict> = if is_samples {
        let samples = read_samples(&a.input)?;
        if let Some(s) = samples.iter().find(|s| s.dim != ensemble.encoder.dim) {
            return Err(input_err(&a.input, format!("sample {} has dim {}, models expect {}", s.source_id, s.dim, ensemble.encoder.dim)));
        }
        analyze_samples(&ensemble, &samples, cfg.jobs).map_err(|e| CliError::Internal(e.to_string()))?
    } else {
        let bytes = read_bytecode(&a.input, a.binary)?;
        analyze_bytecode(&ensemble, &bytes, cfg.jobs).map_err(|e| match e {
            EnsembleError::Decode(d) => decode_error(&a.input, d),
            other => CliError::Internal(other.to_string()),
        })?
    };
    let mut text = String::new();
    for l in &lines {
        text.push_str(&serde_json::to_string(l).map_err(|e| CliError::Internal(e.to_string()))?);
        text.push('\n');
    }
    emit(a.output.as_deref(), &text)?;
    let total: f64 = lines.iter().map(|l| l.seconds).sum();
    eprintln!(
        "{} functions, {} vulnerable, {:.4}s per function",
        lines.len(),
        lines.iter().filter(|l| l.verdict.label == VerdictLabel::Vulnerable).count(),
        if lines.is_empty() { 0.0 } else { total / lines.len() as f64 }
    );
    Ok(())
}

/// `(id, label text, seconds)` rows from JSON lines (verdicts or samples)
/// or CSV.
fn read_labels(path: &Path) -> Result<Vec<(String, String, Option<f64>)>, CliError> {
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e == "jsonl" || e == "json" || e == "ndjson");
    let mut out = Vec::new();
    if is_json {
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| input_err(path, format!("line {}: {e}", n + 1)))?;
            // Sample files key by source_id.
            let id = match v.get("id").or_else(|| v.get("source_id")) {
                Some(serde_json::Value::String(s)) => s.clone(),
                _ => return Err(input_err(path, format!("line {}: missing id", n + 1))),
            };
            let label = match &v["label"] {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(x) => x.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => return Err(input_err(path, format!("line {}: missing label", n + 1))),
            };
            out.push((id, label, v["seconds"].as_f64()));
        }
    } else {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| input_err(path, e))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let (Some(i), Some(l)) = (col("id"), col("label")) else {
            return Err(input_err(path, "CSV needs id and label columns"));
        };
        let s = col("seconds");
        for rec in r.records() {
            let rec = rec.map_err(|e| input_err(path, e))?;
            let seconds = s.and_then(|s| rec.get(s)).and_then(|t| t.trim().parse().ok());
            out.push((rec[i].trim().to_string(), rec[l].trim().to_string(), seconds));
        }
    }
    Ok(out)
}

fn label_bit(text: &str) -> Option<bool> {
    match text.to_ascii_lowercase().as_str() {
        "1" | "true" | "vulnerable" => Some(true),
        "0" | "false" | "non_vulnerable" | "non-vulnerable" => Some(false),
        _ => None,
    }
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (counts, mean_time) = if let Some(c) = &a.counts {
        let parts: Vec<u64> = c
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("--counts {c:?}: expected TP,FP,TN,FN")))?;
        let [tp, fp, tn, fn_] = parts[..] else {
            return Err(CliError::Usage(format!("--counts {c:?}: expected four numbers")));
        };
        (ConfusionCounts::new(tp, fp, tn, fn_), None)
    } else {
        let (Some(pred), Some(gold)) = (&a.predictions, &a.gold) else {
            return Err(CliError::Usage("give --counts or both --predictions and --gold".into()));
        };
        let preds = read_labels(pred)?;
        let truth = read_labels(gold)?;
        let by_id: HashMap<&str, &str> = preds.iter().map(|(id, l, _)| (id.as_str(), l.as_str())).collect();
        let mut pairs = Vec::with_capacity(truth.len());
        for (id, label, _) in &truth {
            let actual = label_bit(label).ok_or_else(|| input_err(gold, format!("{id}: unusable gold label {label:?}")))?;
            let p = by_id.get(id.as_str()).ok_or_else(|| input_err(pred, format!("no prediction for {id}")))?;
            // An abstaining committee counts as a negative call.
            let predicted = match p.to_ascii_lowercase().as_str() {
                "unknown" => false,
                other => label_bit(other).ok_or_else(|| input_err(pred, format!("{id}: unusable label {p:?}")))?,
            };
            pairs.push((predicted, actual));
        }
        let times: Vec<f64> = preds.iter().filter_map(|p| p.2).collect();
        let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
        (ConfusionCounts::from_pairs(pairs), mean)
    };
    let time = a.time.or(mean_time).unwrap_or(0.0);
    let row = metrics::report(&a.tool, &counts, time).map_err(|e| CliError::Input(e.to_string()))?;
    let text = match a.format {
        TableFormat::Text => metrics::to_text(&[row]),
        TableFormat::Csv => metrics::to_csv(&[row]),
    };
    print!("{text}");
    Ok(())
}

fn exploit_error(path: &Path, e: ExploitError) -> CliError {
    match e {
        ExploitError::MalformedAbi { .. } => input_err(path, e),
        _ => CliError::Input(e.to_string()),
    }
}

pub fn exploit(cfg: &RunConfig, a: &ExploitArgs) -> Result<(), CliError> {
    let abi = exploit::parse_abi(&read_text(&a.abi)?).map_err(|e| exploit_error(&a.abi, e))?;
    let amount = a.amount_wei.unwrap_or(cfg.amount_wei);
    let plans = exploit::plan_attacks(&abi, &a.victim, &a.function, amount, cfg.seed).map_err(|e| exploit_error(&a.abi, e))?;
    let sources = plans.iter().map(exploit::generate).collect::<Result<Vec<_>, _>>().map_err(|e| exploit_error(&a.abi, e))?;
    fs::create_dir_all(&a.output).map_err(|e| write_err(&a.output, e))?;
    for s in &sources {
        let path = a.output.join(&s.file_name);
        fs::write(&path, &s.source).map_err(|e| write_err(&path, e))?;
        println!("{}", path.display());
    }
    let manifest = a.output.join("plans.json");
    let text = serde_json::to_string_pretty(&exploit::manifest(&plans)).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&manifest, text + "\n").map_err(|e| write_err(&manifest, e))
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> Result<(), CliError> {
    let model = VictimModel::from_json(&read_text(&a.model)?).map_err(|e| input_err(&a.model, e))?;
    let mut params = cfg.attack_params();
    if let Some(v) = a.deposit_wei {
        params.deposit_wei = v;
    }
    if let Some(v) = a.threshold_wei {
        params.threshold_wei = v;
    }
    if let Some(v) = a.wallet_wei {
        params.wallet_wei = v;
    }
    let outcome = sim::run_attack(&model, &params).map_err(|e| CliError::Input(e.to_string()))?;
    if !outcome.conserved {
        return Err(CliError::Internal("wei conservation violated".into()));
    }
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        for ev in &outcome.trace {
            serde_json::to_writer(&mut w, ev).map_err(|e| write_err(path, e))?;
            w.write_all(b"\n").map_err(|e| write_err(path, e))?;
        }
        w.flush().map_err(|e| write_err(path, e))?;
    }
    print!("{}", sim::report(&outcome));
    Ok(())
}
