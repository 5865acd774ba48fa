mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scools_cli::config::{env_settings, parse_config_file, Preset, RunConfig};

/// Function-level reentrancy detection for EVM bytecode.
#[derive(Debug, Parser)]
#[command(name = "scools", version, about)]
pub struct Cli {
    /// key=value config file.
    #[arg(long, global = true, env = "SCOOLS_CONFIG")]
    config: Option<PathBuf>,
    /// paper (120 models) or desk (12 models, shorter training).
    #[arg(long, global = true, env = "SCOOLS_PRESET")]
    preset: Option<String>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training and inference.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override any setting, e.g. --set learning_rate=0.01. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Disassemble runtime bytecode and print per-function CFGs.
    Cfg(CfgArgs),
    /// Turn a labeled corpus or one contract into graph samples.
    Featurize(FeaturizeArgs),
    /// Supervised training of the model grid on a labeled sample set.
    Train(TrainArgs),
    /// Self-training over an unlabeled pool.
    Selftrain(SelftrainArgs),
    /// Committee verdicts for each function of a contract.
    Analyze(AnalyzeArgs),
    /// Accuracy, macro-F1 and false-positive rate.
    Eval(EvalArgs),
    /// Generate attacker contracts from a victim ABI.
    Exploit(ExploitArgs),
    /// Replay the attack against an abstract victim model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct CfgArgs {
    /// File holding runtime bytecode as hex text.
    pub input: PathBuf,
    /// Emit Graphviz DOT instead of JSON.
    #[arg(long)]
    pub dot: bool,
    /// Read the input as raw bytes instead of hex text.
    #[arg(long)]
    pub binary: bool,
    /// ABI used to name functions.
    #[arg(long)]
    pub abi: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Corpus CSV or JSON-lines files. Repeatable.
    #[arg(long, required_unless_present = "bytecode")]
    pub corpus: Vec<PathBuf>,
    /// Encode every function of one contract instead of a corpus.
    #[arg(long, conflicts_with = "corpus")]
    pub bytecode: Option<PathBuf>,
    /// Drop records whose id appears in this id list.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Stratified study/test split, written next to the output.
    #[arg(long)]
    pub split: bool,
    /// Also write the deduplicated corpus as CSV.
    #[arg(long)]
    pub corpus_out: Option<PathBuf>,
    /// Samples as JSON lines.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled samples (JSON lines).
    #[arg(long)]
    pub trusted: PathBuf,
    /// Checkpoint directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftrainArgs {
    #[arg(long)]
    pub trusted: PathBuf,
    /// Unlabeled samples (JSON lines); labels in the file are ignored.
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Output directory for checkpoints, pool snapshots and reports.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Bytecode hex file, or samples when the name ends in .jsonl.
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Required committee size; defaults to the manifest's.
    #[arg(long)]
    pub expect_models: Option<usize>,
    #[arg(long)]
    pub binary: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Raw counts TP,FP,TN,FN.
    #[arg(long, conflicts_with_all = ["predictions", "gold"])]
    pub counts: Option<String>,
    /// Verdicts (JSON lines from analyze, or id,label CSV).
    #[arg(long, requires = "gold")]
    pub predictions: Option<PathBuf>,
    /// Gold labels (JSON lines or CSV with id and label).
    #[arg(long, requires = "predictions")]
    pub gold: Option<PathBuf>,
    #[arg(long, default_value = "SCooLS")]
    pub tool: String,
    /// Seconds per function; defaults to the mean of the predictions' timings.
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct ExploitArgs {
    #[arg(long)]
    pub abi: PathBuf,
    /// Victim contract name.
    #[arg(long)]
    pub victim: String,
    /// Vulnerable function: a name, or a full signature when overloaded.
    #[arg(long)]
    pub function: String,
    /// Re-entry threshold in wei.
    #[arg(long)]
    pub amount_wei: Option<u128>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Victim model JSON.
    pub model: PathBuf,
    #[arg(long)]
    pub deposit_wei: Option<u128>,
    #[arg(long)]
    pub threshold_wei: Option<u128>,
    #[arg(long)]
    pub wallet_wei: Option<u128>,
    /// Write the execution trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            parse_config_file(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => Vec::new(),
    };
    let preset_text = cli
        .preset
        .clone()
        .or_else(|| file.iter().rev().find(|(k, _)| k.eq_ignore_ascii_case("preset")).map(|(_, v)| v.clone()));
    let preset = match preset_text {
        Some(p) => Preset::parse(&p).map_err(CliError::Usage)?,
        None => Preset::Paper,
    };
    let mut cfg = RunConfig::preset(preset);
    let mut pairs: Vec<(String, String)> = file.into_iter().filter(|(k, _)| !k.eq_ignore_ascii_case("preset")).collect();
    pairs.extend(env_settings(std::env::vars()));
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set {s:?}: expected KEY=VALUE")))?;
        pairs.push((k.to_string(), v.to_string()));
    }
    if let Some(seed) = cli.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(jobs) = cli.jobs {
        pairs.push(("jobs".into(), jobs.to_string()));
    }
    for (k, v) in pairs {
        cfg.set(&k, &v).map_err(CliError::Usage)?;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.render());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::Cfg(a) => commands::cfg(&a),
        Command::Featurize(a) => commands::featurize(&cfg, &a),
        Command::Train(a) => commands::train(&cfg, &a),
        Command::Selftrain(a) => commands::selftrain(&cfg, &a),
        Command::Analyze(a) => commands::analyze(&cfg, &a),
        Command::Eval(a) => commands::eval(&a),
        Command::Exploit(a) => commands::exploit(&cfg, &a),
        Command::Simulate(a) => commands::simulate(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
