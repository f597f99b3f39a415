use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin(out: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualsearch"));
    cmd.arg("--out").arg(out).env_remove("DUALSEARCH_OUT");
    cmd
}

fn run(out: &Path, args: &[&str]) -> Output {
    let output = bin(out).args(args).output().unwrap();
    assert!(
        output.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prepared(out: &Path) {
    run(out, &["synth", "--train-pairs", "120", "--valid-pairs", "30", "--test-pairs", "40", "--distractors", "10"]);
    let corpus = out.join("raw/corpus.jsonl");
    run(out, &["preprocess", "--input", corpus.to_str().unwrap()]);
    run(out, &["train-embed", "--dim", "16", "--embed-epochs", "10", "--buckets", "2000", "--subsample", "0.001"]);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    prepared(out);
    let train =
        run(out, &["train", "--loss", "softmax", "--output-size", "16", "--max-epochs", "3", "--batch-size", "32"]);
    assert!(stdout(&train).contains("best epoch"));
    for f in [
        "model/encoder.dsen",
        "model/train_log.jsonl",
        "model/summary.json",
        "index/test.dsix",
        "model/state/state.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(out.join("model/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let eval = run(out, &["eval", "--untrained", "--protocol", "full", "--protocol", "limited", "--chunk-size", "15"]);
    let text = stdout(&eval);
    assert!(text.contains("trained/full") && text.contains("untrained/limited"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 0);
    assert_eq!(report["reports"].as_array().unwrap().len(), 4);
    assert_eq!(report["reports"][1]["report"]["seed"], 0);
    assert_eq!(report["reports"][1]["report"]["pool_size"], "variable");

    let sweep = run(out, &["sweep", "--sizes", "5,10,40", "--repeats", "3"]);
    assert!(stdout(&sweep).starts_with("size,mean_mrr,repeats\n"));
    assert_eq!(fs::read_to_string(out.join("eval/sweep.csv")).unwrap().lines().count(), 4);

    let corpus = out.join("raw/corpus.jsonl");
    let q = run(out, &["query", "returns the value", "-k", "3", "--corpus", corpus.to_str().unwrap()]);
    let text = stdout(&q);
    assert_eq!(text.lines().filter(|l| l.starts_with("  ")).filter(|l| l.contains("test-")).count(), 3, "{text}");
    assert!(text.contains("| def "), "{text}");

    let mut child = bin(out).args(["query", "-k", "2"]).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(b"first query\n\nsecond query\n").unwrap();
    let done = child.wait_with_output().unwrap();
    assert!(done.status.success());
    assert_eq!(stdout(&done).lines().filter(|l| l.contains("test-")).count(), 4);

    let stats = run(out, &["stats", "--top", "5"]);
    assert!(stdout(&stats).lines().any(|l| l.starts_with("untrained") && l.contains("non-linked")));
    assert!(out.join("stats.json").exists());
}

#[test]
fn preprocess_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run(out, &["synth", "--train-pairs", "30", "--valid-pairs", "5", "--test-pairs", "10"]);
    let corpus = out.join("raw/corpus.jsonl");
    let read = || {
        ["train", "valid", "test", "manifest"].map(|s| {
            fs::read(out.join("data").join(format!("{s}.{}", if s == "manifest" { "json" } else { "jsonl" }))).unwrap()
        })
    };
    run(out, &["preprocess", "--input", corpus.to_str().unwrap()]);
    let first = read();
    run(out, &["preprocess", "--input", corpus.to_str().unwrap()]);
    assert_eq!(first, read());
}

#[test]
fn missing_input_is_a_data_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bin(&out).args(["preprocess", "--train", "/nonexistent/train.jsonl"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("data").exists());
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(bin(out).args(["train", "--loss", "hinge"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin(out).args(["frobnicate"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin(out).args(["--config", "/nonexistent.json", "stats"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin(out).args(["ablate", "--losses", "hinge"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin(out).args(["--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn query_without_index_explains_the_fix() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(dir.path()).args(["query", "anything"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dualsearch train"), "{err}");
}

#[test]
fn resume_continues_the_epoch_counter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    prepared(out);
    let common = ["--output-size", "8", "--batch-size", "32", "--patience", "50"];
    run(out, &[&["train", "--max-epochs", "2"][..], &common].concat());
    let resumed = run(out, &[&["train", "--resume", "--max-epochs", "4"][..], &common].concat());
    assert!(stdout(&resumed).contains("resuming after epoch 2"));
    let epochs: Vec<u64> = fs::read_to_string(out.join("model/train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    let (resumed_model, _) = dualsearch::encoder::read_checkpoint(&out.join("model/encoder.dsen")).unwrap();

    let again = tempfile::tempdir().unwrap();
    prepared(again.path());
    run(again.path(), &[&["train", "--max-epochs", "4"][..], &common].concat());
    let (straight, _) = dualsearch::encoder::read_checkpoint(&again.path().join("model/encoder.dsen")).unwrap();
    assert_eq!(resumed_model, straight);
}

#[test]
fn separate_and_subword_off_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    prepared(out);
    run(out, &["train-embed", "--language-model", "separate", "--dim", "8", "--embed-epochs", "1"]);
    assert!(out.join("embeddings/text.dsem").exists() && out.join("embeddings/code.dsem").exists());
    assert!(!out.join("embeddings/unified.dsem").exists());

    run(out, &["train-embed", "--language-model", "subword-off", "--dim", "8", "--embed-epochs", "1"]);
    let model = dualsearch::embedding::read_model(&out.join("embeddings/unified.dsem")).unwrap();
    assert!(!model.subword.enabled);
    assert!(!out.join("embeddings/text.dsem").exists());
    assert_ne!(model.config_hash, 0);
}

#[test]
fn ablation_rows_match_requested_axes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    prepared(out);
    run(
        out,
        &[
            "ablate",
            "--language-models",
            "unified,separate",
            "--losses",
            "cosine-bce,softmax",
            "--output-sizes",
            "8",
            "--pass-counts",
            "1,2",
            "--max-epochs",
            "1",
            "--dim",
            "8",
            "--embed-epochs",
            "1",
        ],
    );
    let table = fs::read_to_string(out.join("ablation/ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2);
    assert!(table.contains("separate/softmax/h8/p2"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ablation/ablation.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dualsearch"))
        .args(["synth", "--train-pairs", "5", "--valid-pairs", "2", "--test-pairs", "2", "--distractors", "0"])
        .env("DUALSEARCH_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("raw/corpus.jsonl").exists());
}
