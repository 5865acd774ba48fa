use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scools_core::exploit::tokens::{outline, tokenize};

fn scools(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scools"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCOOLS_CONFIG")
        .env_remove("SCOOLS_PRESET")
        .env_remove("SCOOLS_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const BANK_ABI: &str = r#"[
  {"type":"function","name":"deposit","inputs":[],"outputs":[],"stateMutability":"payable"},
  {"type":"function","name":"withdrawal","inputs":[],"outputs":[],"stateMutability":"nonpayable"},
  {"type":"function","name":"balances","inputs":[{"name":"","type":"address"}],"outputs":[{"name":"","type":"uint256"}],"stateMutability":"view"}
]"#;

// Dispatcher for 0xaaaaaaaa and 0xbbbbbbbb; the rest falls to a STOP.
const TWO_FN: &str = "60003560e01c8063aaaaaaaa14601a5763bbbbbbbb14601d57005b33005b3200";

#[test]
fn cfg_json_dot_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pre.hex"), "0x6080604052\n").unwrap();
    let o = scools(dir.path(), &["cfg", "pre.hex"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!v["functions"][0]["blocks"].as_array().unwrap().is_empty());

    let o = scools(dir.path(), &["cfg", "pre.hex", "--dot"]);
    assert!(stdout(&o).starts_with("digraph"));

    fs::write(dir.path().join("empty.hex"), "").unwrap();
    let o = scools(dir.path(), &["cfg", "empty.hex"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EmptyInput"));

    fs::write(dir.path().join("two.hex"), TWO_FN).unwrap();
    fs::write(dir.path().join("bank.abi"), BANK_ABI).unwrap();
    let o = scools(dir.path(), &["cfg", "two.hex", "--abi", "bank.abi"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["functions"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_reproduces_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = scools(dir.path(), &["eval", "--counts", "9,2,239,2"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let row = out.lines().nth(1).unwrap();
    assert!(row.contains("98.4  90.5  0.8"), "{row}");

    fs::write(dir.path().join("pred.jsonl"), "{\"id\":\"a\",\"label\":\"vulnerable\",\"seconds\":0.5}\n{\"id\":\"b\",\"label\":\"unknown\",\"seconds\":0.1}\n{\"id\":\"c\",\"label\":\"non_vulnerable\",\"seconds\":0.3}\n").unwrap();
    fs::write(dir.path().join("gold.csv"), "id,label\na,1\nb,1\nc,0\n").unwrap();
    let o = scools(dir.path(), &["eval", "--predictions", "pred.jsonl", "--gold", "gold.csv", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().nth(1).unwrap(), "SCooLS,1,0,1,1,66.7,66.7,0.0,0.30");

    let o = scools(dir.path(), &["eval", "--counts", "1,2,3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exploit_writes_one_source_per_payable() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bank.abi"), BANK_ABI).unwrap();
    let o = scools(dir.path(), &["exploit", "--abi", "bank.abi", "--victim", "TheBank", "--function", "withdrawal", "-o", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let src = fs::read_to_string(dir.path().join("out/TheBank_deposit_withdrawal.sol")).unwrap();
    let shape = outline(&tokenize(&src).unwrap());
    assert_eq!(shape.interfaces, ["Itarget"]);
    assert_eq!(shape.interface_functions, [vec!["deposit", "withdrawal"]]);
    assert_eq!(shape.contract_functions, [vec!["constructor", "attack_step1", "attack_step2", "receive", "steal"]]);
    let plans: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/plans.json")).unwrap()).unwrap();
    assert_eq!(plans.as_array().unwrap().len(), 1);

    let o = scools(dir.path(), &["exploit", "--abi", "bank.abi", "--victim", "TheBank", "--function", "steal", "-o", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("VulnerableFnNotInAbi"));
    fs::write(dir.path().join("bad.abi"), "[{").unwrap();
    let o = scools(dir.path(), &["exploit", "--abi", "bad.abi", "--victim", "B", "--function", "w", "-o", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MalformedAbi"));
}

#[test]
fn simulate_reports_exploitability() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{"deposit":[{"op":"add_credit","amount":"value"}],
        "withdrawal":[{"op":"require_credit","amount":"credit"},{"op":"send","amount":"credit"},{"op":"zero_credit"}],
        "initial_pot_wei":3000000000000000000}"#;
    fs::write(dir.path().join("bank.json"), model).unwrap();
    let o = scools(dir.path(), &["simulate", "bank.json", "--trace", "trace.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("This exploitation net profit is: 3.00 Ether(s)"), "{out}");
    assert!(out.contains("The detected reentrancy can be exploited."));
    assert!(fs::read_to_string(dir.path().join("trace.jsonl")).unwrap().lines().count() > 4);

    let safe = model.replace(r#"{"op":"send","amount":"credit"},{"op":"zero_credit"}"#, r#"{"op":"zero_credit"},{"op":"send","amount":"credit"}"#);
    fs::write(dir.path().join("safe.json"), safe).unwrap();
    let o = scools(dir.path(), &["simulate", "safe.json"]);
    assert!(stdout(&o).contains("cannot be exploited"));

    fs::write(dir.path().join("bad.json"), "{\"deposit\":[{\"op\":\"mint\"}],\"withdrawal\":[]}").unwrap();
    assert_eq!(scools(dir.path(), &["simulate", "bad.json"]).status.code(), Some(2));
}

#[test]
fn config_layers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), "preset = desk\nlearning_rate = 0.01\nseed = 4\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_scools"))
        .args(["--config", "run.conf", "--set", "iterations=2", "--print-config"])
        .current_dir(dir.path())
        .env("SCOOLS_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for line in ["preset=desk", "learning_rate=0.01", "seed=11", "iterations=2", "ensemble_size=12"] {
        assert!(text.lines().any(|l| l == line), "{line} missing from\n{text}");
    }
    let o = scools(dir.path(), &["--print-config"]);
    for line in ["learning_rate=0.005", "batch_size=2048", "max_epochs=1000", "patience=200", "ensemble_size=120", "iterations=3"] {
        assert!(stdout(&o).lines().any(|l| l == line), "{line}");
    }
    assert_eq!(scools(dir.path(), &["--set", "nonsense=1", "--print-config"]).status.code(), Some(1));
    assert_eq!(scools(dir.path(), &["--set", "low_band=0.95", "--print-config"]).status.code(), Some(1));
}

/// Single-function contracts: a value call before or after a storage write.
fn corpus_csv() -> String {
    let mut s = String::from("contract_address,function_name_or_selector,runtime_bytecode_hex,label\n");
    for k in 0..12u8 {
        let call = "6000600060006000600033";
        let (body, label) = if k % 2 == 0 {
            (format!("{call}5af1506001600055"), 1)
        } else {
            (format!("6001600055{call}5af150"), 0)
        };
        s.push_str(&format!("0x{k:02x},FALLBACK,0x{body}60{k:02x}5000,{label}\n"));
    }
    s
}

#[test]
fn featurize_train_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("corpus.csv"), corpus_csv()).unwrap();
    fs::write(p.join("two.hex"), TWO_FN).unwrap();
    let small = [
        "--set", "encoder_dim=16", "--set", "conv_kinds=gcn,gin", "--set", "layers=1", "--set", "widths=32",
        "--set", "poolings=average", "--set", "max_epochs=6", "--set", "patience=2", "--set", "validation=trusted",
    ];
    let with = |args: &[&str]| -> Vec<String> { small.iter().chain(args).map(|s| s.to_string()).collect() };

    let args = with(&["featurize", "--corpus", "corpus.csv", "--split", "-o", "samples.jsonl"]);
    let o = scools(p, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(p.join("samples.jsonl")).unwrap().lines().count(), 12);
    assert_eq!(fs::read_to_string(p.join("samples.study.jsonl")).unwrap().lines().count(), 6);

    let args = with(&["train", "--trusted", "samples.jsonl", "-o", "ckpt"]);
    let o = scools(p, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(p.join("ckpt/manifest.json").is_file());
    assert!(p.join("ckpt/curves/model-001.csv").is_file());

    let o = scools(p, &["analyze", "two.hex", "--checkpoints", "ckpt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["votes_for_1"].as_u64().unwrap() + l["votes_for_0"].as_u64().unwrap() + l["discarded"].as_u64().unwrap(), 2);
        assert!(l["seconds"].as_f64().unwrap() >= 0.0);
    }

    let o = scools(p, &["analyze", "samples.test.jsonl", "--checkpoints", "ckpt", "-o", "pred.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = scools(p, &["eval", "--predictions", "pred.jsonl", "--gold", "samples.test.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    assert_eq!(scools(p, &["analyze", "two.hex", "--checkpoints", "ckpt", "--expect-models", "3"]).status.code(), Some(2));
    fs::remove_file(p.join("ckpt/model-001.json")).unwrap();
    let o = scools(p, &["analyze", "two.hex", "--checkpoints", "ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MissingCheckpoint"));
}

#[test]
fn selftrain_writes_pool_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("corpus.csv"), corpus_csv()).unwrap();
    let small = [
        "--set", "encoder_dim=16", "--set", "conv_kinds=gcn", "--set", "layers=1,2", "--set", "widths=32",
        "--set", "poolings=average", "--set", "max_epochs=6", "--set", "patience=2", "--set", "iterations=2",
    ];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = small.iter().copied().chain(extra.iter().copied()).collect();
        scools(p, &args)
    };
    assert_eq!(run(&["featurize", "--corpus", "corpus.csv", "--split", "-o", "s.jsonl"]).status.code(), Some(0));
    let trusted_before = fs::read(p.join("s.study.jsonl")).unwrap();
    let o = run(&["selftrain", "--trusted", "s.study.jsonl", "--unlabeled", "s.jsonl", "-o", "st"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(p.join("s.study.jsonl")).unwrap(), trusted_before);
    let reports = fs::read_to_string(p.join("st/reports.csv")).unwrap();
    assert_eq!(reports.lines().count(), 3);
    for line in reports.lines().skip(1) {
        let f: Vec<usize> = line.split(',').skip(1).take(3).map(|x| x.parse().unwrap()).collect();
        // Six trusted ids are rejected from the twelve-sample pool.
        assert_eq!(f.iter().sum::<usize>(), 6);
    }
    let snap = fs::read_to_string(p.join("st/pool-iter2.jsonl")).unwrap();
    assert_eq!(snap.lines().filter(|l| l.contains("\"trusted\"")).count(), 6);
    assert!(p.join("st/scores-iter1.jsonl").is_file());
    assert!(p.join("st/manifest.json").is_file());
}
