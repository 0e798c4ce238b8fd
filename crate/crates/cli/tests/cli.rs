use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUERY: &str = "privatization: is water a resource that should be owned by private companies versus a global commons?";
const DOC: &str = "private companies are profit-maximizing entities that often view environmental health and safety standards as obstructive to their profit interests.";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relconstrain"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn constrain_prints_one_clause_per_line() {
    let out = run(&["constrain", "--query", QUERY, "--document", DOC]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        assert!(!line.split('|').next().unwrap().is_empty());
    }
}

#[test]
fn saliency_tsv_has_a_row_per_token() {
    let out = run(&["saliency", "--query", QUERY, "--document", DOC, "--k", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.len() == 4));
    let selected = rows.iter().filter(|r| r[3] == "1").count();
    assert_eq!(selected, 2);
    let norm: f64 = rows
        .iter()
        .map(|r| r[2].parse::<f64>().unwrap().abs())
        .sum();
    assert!((norm - 1.0).abs() < 1e-9);
}

#[test]
fn train_decode_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let lm = dir.path().join("lm.txt");
    let train = fixtures().join("train.jsonl");
    let out = run(&[
        "train-lm",
        "--train",
        train.to_str().unwrap(),
        "--output",
        lm.to_str().unwrap(),
        "--smoothing",
        "0.1",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let trace = dir.path().join("trace.jsonl");
    let out = run(&[
        "decode",
        "--lm",
        lm.to_str().unwrap(),
        "--query",
        "policy: should we worry about water?",
        "--document",
        "critics say that energy and water often affect schools",
        "--scorer",
        fixtures().join("scorer.txt").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--beam-width",
        "10",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let row: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(row["satisfied"], true);
    assert_eq!(row["constraints"].as_array().unwrap().len(), 3);
    let steps = std::fs::read_to_string(&trace).unwrap();
    assert!(steps.lines().count() >= 1);
    for line in steps.lines() {
        let step: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(step["groups"].as_array().unwrap().len() <= 8);
        assert!(step["beam"].as_array().unwrap().len() <= 10);
    }

    let preds = dir.path().join("preds.jsonl");
    std::fs::write(
        &preds,
        "{\"id\":\"a\",\"prediction\":\"the cat sat\"}\n{\"id\":\"b\",\"prediction\":\"x y\"}\n",
    )
    .unwrap();
    let refs = dir.path().join("refs.jsonl");
    std::fs::write(
        &refs,
        "{\"id\":\"a\",\"summary\":\"the cat ran\"}\n{\"id\":\"b\",\"summary\":\"x y\"}\n",
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        "--predictions",
        preds.to_str().unwrap(),
        "--references",
        refs.to_str().unwrap(),
        "--compare",
        preds.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let r1 = report["r1"]["f1"].as_f64().unwrap();
    assert!((r1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
    assert_eq!(report["compare"]["r1"]["p_value"], 1.0);
}

#[test]
fn pipeline_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = fixtures().join("pipeline.conf");
    let out = run(&[
        "pipeline",
        "--config",
        conf.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--beam-width",
        "8",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["decoder"]["beam_width"], 8);
    assert_eq!(report["report_version"], 1);
    assert!(dir.path().join("predictions.jsonl").exists());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["decode", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        run(&[
            "constrain",
            "--query",
            "q",
            "--document",
            "d",
            "--source",
            "title"
        ])
        .status
        .code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let lm = dir.path().join("lm.txt");
    let out = run(&[
        "train-lm",
        "--train",
        missing.to_str().unwrap(),
        "--output",
        lm.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"query\":\"q\",\"summary\":\"s\"}\n").unwrap();
    let out = run(&[
        "train-lm",
        "--train",
        bad.to_str().unwrap(),
        "--output",
        lm.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1: missing field document"));

    let truncated = dir.path().join("truncated.txt");
    std::fs::write(&truncated, "RELCONSTRAIN-LM v1\norder=2\nk=1\n").unwrap();
    let out = run(&[
        "decode",
        "--lm",
        truncated.to_str().unwrap(),
        "--query",
        "q",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let conf = fixtures().join("pipeline.conf");
    let out = run(&[
        "pipeline",
        "--config",
        conf.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--lambda",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
