use std::path::Path;

use relconstrain::pipeline::{
    load_dataset, run_pipeline, write_jsonl, ConstraintSource, PipelineConfig, Prediction,
    QfsExample,
};
use relconstrain::text::{is_content_token, tokenize, StopList};

fn fixture_config(output: &Path) -> PipelineConfig {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pipeline.conf");
    let mut cfg = PipelineConfig::load(&conf).unwrap();
    cfg.output_dir = output.to_path_buf();
    cfg
}

fn read_predictions(path: &Path) -> Vec<Prediction> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&fixture_config(dir.path())).unwrap();
    assert_eq!(report.report_version, 1);
    assert_eq!(report.examples.len(), 8);
    assert!(report.paired_t_tests.is_some());

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    for key in ["r1", "r2", "rl"] {
        assert!(json["constrained"]["rouge"][key]["f1"].is_number());
        assert!(json["paired_t_tests"][key]["p_value"].is_number());
    }
    assert!(json["constrained"]["satisfaction_rate"].is_number());
    assert_eq!(json["examples"].as_array().unwrap().len(), 8);

    let preds = read_predictions(&dir.path().join("predictions.jsonl"));
    assert_eq!(preds.len(), 8);
    for (p, row) in preds.iter().zip(&report.examples) {
        assert_eq!(p.id, row.id);
        assert_eq!(p.satisfied, row.satisfied);
        assert_eq!(p.constraints, row.constraints);
    }
}

#[test]
fn document_constraints_come_from_document_content() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    assert_eq!(cfg.constraint_source, ConstraintSource::Document);
    let test = load_dataset(&cfg.test).unwrap();
    run_pipeline(&cfg).unwrap();
    let stops = StopList::default();
    for (ex, p) in test
        .iter()
        .zip(read_predictions(&dir.path().join("predictions.jsonl")))
    {
        let doc = tokenize(&ex.document);
        for clause in &p.constraints {
            let head = &clause[0];
            assert!(doc.contains(head), "{head} not in document {}", ex.id);
            assert!(is_content_token(head, &stops));
        }
    }
}

fn write_split(dir: &Path, name: &str, rows: &[QfsExample]) -> std::path::PathBuf {
    let path = dir.join(name);
    write_jsonl(&path, rows).unwrap();
    path
}

fn ex(id: &str, query: &str, document: &str, summary: &str) -> QfsExample {
    QfsExample {
        id: id.into(),
        query: query.into(),
        document: document.into(),
        summary: summary.into(),
    }
}

#[test]
fn stopword_documents_give_vacuous_satisfaction() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_split(
        dir.path(),
        "train.jsonl",
        &[ex("t", "what now?", "anything", "nothing much .")],
    );
    let test = write_split(
        dir.path(),
        "test.jsonl",
        &[
            ex("a", "what now?", "it is what it is .", "nothing much ."),
            ex("b", "what now?", "and then , of the", "nothing ."),
        ],
    );
    let mut cfg = fixture_config(&dir.path().join("out"));
    cfg.train = train;
    cfg.test = test;
    cfg.scorer = None;
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.constrained.satisfaction_rate, 1.0);
    assert!(report.examples.iter().all(|r| r.constraints.is_empty()));
    // no constraints: constrained and plain decoding coincide
    for row in &report.examples {
        assert_eq!(Some(&row.prediction), row.baseline_prediction.as_ref());
    }
}

#[test]
fn long_documents_are_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_split(dir.path(), "train.jsonl", &[ex("t", "q?", "d", "water .")]);
    let test = write_split(
        dir.path(),
        "test.jsonl",
        &[ex(
            "a",
            "q?",
            "water energy schools taxes privacy",
            "water .",
        )],
    );
    let mut cfg = fixture_config(&dir.path().join("out"));
    cfg.train = train;
    cfg.test = test;
    cfg.max_doc_tokens = 2;
    let report = run_pipeline(&cfg).unwrap();
    let heads: Vec<&str> = report.examples[0]
        .constraints
        .iter()
        .map(|c| c[0].as_str())
        .collect();
    assert_eq!(heads.len(), 2);
    assert!(heads.iter().all(|h| ["water", "energy"].contains(h)));
}

#[test]
fn missing_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.test = dir.path().join("absent.jsonl");
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.is_data_error());
}
