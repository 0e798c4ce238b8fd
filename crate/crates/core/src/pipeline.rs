//! Dataset IO, configuration and the end-to-end run.
//!
//! LM training sequences are `query ⊕ <sep> ⊕ summary`; decoding is prompted
//! with `query ⊕ <sep>`. Document content reaches the output only through the
//! constraints.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{build_cnf, Cnf, CompiledCnf, MorphologyTable};
use crate::decoder::{beam_search, nld_decode, DecodeOutput, DecoderConfig};
use crate::error::{Error, Result};
use crate::eval::{paired_t_test, PairedTestResult, RougeScores};
use crate::exec::Execution;
use crate::lm::NGramLm;
use crate::saliency::{
    compute_saliency, select_constraint_tokens, SaliencyVector, ScorerModel, DEFAULT_DIM,
    DEFAULT_SEED, DEFAULT_STEPS,
};
use crate::text::{tokenize, StopList, TokenId, SEP};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QfsExample {
    pub id: String,
    pub query: String,
    pub document: String,
    pub summary: String,
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::Line {
        line,
        message: message.into(),
    }
}

fn string_field(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    line: usize,
) -> Result<String> {
    match obj.get(key) {
        None => Err(line_err(line, format!("missing field {key}"))),
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(line_err(line, format!("field {key} must be a string"))),
    }
}

/// One example per non-blank JSONL line, in file order.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<QfsExample>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {lineno}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| line_err(lineno, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| line_err(lineno, "expected a JSON object"))?;
        let ex = QfsExample {
            id: string_field(obj, "id", lineno)?,
            query: string_field(obj, "query", lineno)?,
            document: string_field(obj, "document", lineno)?,
            summary: string_field(obj, "summary", lineno)?,
        };
        for (name, v) in [("query", &ex.query), ("document", &ex.document)] {
            if v.trim().is_empty() {
                return Err(line_err(lineno, format!("empty field {name}")));
            }
        }
        if !ids.insert(ex.id.clone()) {
            return Err(line_err(lineno, format!("duplicate id {}", ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QfsExample>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_dataset(BufReader::new(file)).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Which tokens constraints are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintSource {
    Query,
    #[default]
    Document,
    Both,
}

impl FromStr for ConstraintSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Self::Query),
            "document" => Ok(Self::Document),
            "both" => Ok(Self::Both),
            _ => Err(Error::InvalidArgument(format!(
                "constraint source must be query, document or both, got {s:?}"
            ))),
        }
    }
}

/// Everything needed to build constraints for one example.
pub struct ConstraintBuilder {
    pub scorer: ScorerModel,
    pub stops: StopList,
    pub morphology: MorphologyTable,
    pub k: usize,
    pub source: ConstraintSource,
    pub ig_steps: usize,
    pub execution: Execution,
}

impl Default for ConstraintBuilder {
    fn default() -> Self {
        ConstraintBuilder {
            scorer: ScorerModel::seeded(DEFAULT_DIM, DEFAULT_SEED).expect("positive dim"),
            stops: StopList::default(),
            morphology: MorphologyTable::builtin(),
            k: 3,
            source: ConstraintSource::Document,
            ig_steps: DEFAULT_STEPS,
            execution: Execution::default(),
        }
    }
}

impl ConstraintBuilder {
    /// Saliency over the tokens named by `source`, scored against the query.
    pub fn saliency(&self, query: &[String], document: &[String]) -> Result<SaliencyVector> {
        let attributed: Vec<String> = match self.source {
            ConstraintSource::Document => document.to_vec(),
            ConstraintSource::Query => query.to_vec(),
            ConstraintSource::Both => query.iter().chain(document).cloned().collect(),
        };
        compute_saliency(
            &self.scorer.scorer,
            &self.scorer.embeddings,
            query,
            &attributed,
            self.ig_steps,
            self.execution,
        )
    }

    pub fn constrain(
        &self,
        query: &[String],
        document: &[String],
    ) -> Result<(Cnf, SaliencyVector)> {
        let saliency = self.saliency(query, document)?;
        let selected = select_constraint_tokens(&saliency, &self.stops, self.k);
        Ok((build_cnf(&selected, &self.morphology)?, saliency))
    }

    pub fn constrain_example(&self, ex: &QfsExample) -> Result<Cnf> {
        Ok(self
            .constrain(&tokenize(&ex.query), &tokenize(&ex.document))?
            .0)
    }
}

/// `query ⊕ <sep>` (plus `summary` when given) as surfaces.
pub fn lm_sequence(query: &str, summary: Option<&str>) -> Vec<String> {
    let mut seq = tokenize(query);
    seq.push(SEP.to_string());
    if let Some(s) = summary {
        seq.extend(tokenize(s));
    }
    seq
}

/// Trains the n-gram LM on `query ⊕ <sep> ⊕ summary` sequences.
pub fn train_lm(examples: &[QfsExample], order: usize, k: f64) -> Result<NGramLm> {
    let corpus: Vec<Vec<String>> = examples
        .iter()
        .map(|ex| lm_sequence(&ex.query, Some(&ex.summary)))
        .collect();
    NGramLm::train_surfaces(&corpus, order, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    pub output_dir: PathBuf,
    /// Load this LM instead of training one.
    pub lm: Option<PathBuf>,
    pub lm_order: usize,
    pub lm_k: f64,
    pub scorer: Option<PathBuf>,
    pub scorer_seed: u64,
    pub scorer_dim: usize,
    pub stopwords: Option<PathBuf>,
    pub morphology: Option<PathBuf>,
    pub k_constraints: usize,
    pub constraint_source: ConstraintSource,
    pub ig_steps: usize,
    pub decoder: DecoderConfig,
    pub max_doc_tokens: usize,
    /// Also decode without constraints and compare.
    pub baseline: bool,
}

/// Keys accepted in config files and as `pipeline` flags.
pub const CONFIG_KEYS: &[&str] = &[
    "train",
    "dev",
    "test",
    "output-dir",
    "lm",
    "lm-order",
    "lm-k",
    "scorer",
    "scorer-seed",
    "scorer-dim",
    "stopwords",
    "morphology",
    "k-constraints",
    "constraint-source",
    "ig-steps",
    "beam-width",
    "lambda",
    "max-len",
    "expand-top",
    "clause-slack",
    "likelihood-keep",
    "max-doc-tokens",
    "baseline",
    "execution",
];

/// Keys whose values are file system paths.
pub const PATH_KEYS: &[&str] = &[
    "train",
    "dev",
    "test",
    "output-dir",
    "lm",
    "scorer",
    "stopwords",
    "morphology",
];

/// Joins relative path values onto `base`; other settings pass through.
pub fn resolve_paths(settings: Vec<(String, String)>, base: &Path) -> Vec<(String, String)> {
    settings
        .into_iter()
        .map(|(k, v)| {
            if PATH_KEYS.contains(&k.replace('_', "-").as_str()) {
                let joined = base.join(&v).to_string_lossy().into_owned();
                (k, joined)
            } else {
                (k, v)
            }
        })
        .collect()
}

/// Parses flat `key = value` lines. `#` starts a comment line; keys may use
/// `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| line_err(i + 1, "expected key = value"))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}: {e}")))
}

impl PipelineConfig {
    /// Applies `key = value` settings in order; later ones win. Path values
    /// are used as given.
    pub fn from_settings(settings: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in settings {
            let key = k.replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
            }
            map.insert(key, v.clone());
        }
        let path = |key: &str| map.get(key).map(PathBuf::from);
        let required = |key: &str| {
            path(key).ok_or_else(|| Error::InvalidArgument(format!("missing required key {key}")))
        };
        let get = |key: &str| map.get(key).map(String::as_str);

        let defaults = DecoderConfig::default();
        let beam_width =
            get("beam-width").map_or(Ok(defaults.beam_width), |v| parse_value("beam-width", v))?;
        let mut decoder = DecoderConfig {
            beam_width,
            likelihood_keep: 2 * beam_width,
            ..defaults
        };
        if let Some(v) = get("lambda") {
            decoder.lambda = parse_value("lambda", v)?;
        }
        if let Some(v) = get("max-len") {
            decoder.max_len = parse_value("max-len", v)?;
        }
        if let Some(v) = get("expand-top") {
            decoder.expand_top = parse_value("expand-top", v)?;
        }
        if let Some(v) = get("clause-slack") {
            decoder.clause_slack = parse_value("clause-slack", v)?;
        }
        if let Some(v) = get("likelihood-keep") {
            decoder.likelihood_keep = parse_value("likelihood-keep", v)?;
        }
        if let Some(v) = get("execution") {
            decoder.execution = match v {
                "parallel" => Execution::Parallel,
                "sequential" => Execution::Sequential,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "execution must be parallel or sequential, got {v:?}"
                    )))
                }
            };
        }
        decoder.validate()?;

        let cfg = PipelineConfig {
            train: required("train")?,
            dev: path("dev"),
            test: required("test")?,
            output_dir: required("output-dir")?,
            lm: path("lm"),
            lm_order: get("lm-order").map_or(Ok(3), |v| parse_value("lm-order", v))?,
            lm_k: get("lm-k").map_or(Ok(1.0), |v| parse_value("lm-k", v))?,
            scorer: path("scorer"),
            scorer_seed: get("scorer-seed")
                .map_or(Ok(DEFAULT_SEED), |v| parse_value("scorer-seed", v))?,
            scorer_dim: get("scorer-dim")
                .map_or(Ok(DEFAULT_DIM), |v| parse_value("scorer-dim", v))?,
            stopwords: path("stopwords"),
            morphology: path("morphology"),
            k_constraints: get("k-constraints")
                .map_or(Ok(3), |v| parse_value("k-constraints", v))?,
            constraint_source: get("constraint-source")
                .map_or(Ok(ConstraintSource::Document), str::parse)?,
            ig_steps: get("ig-steps").map_or(Ok(DEFAULT_STEPS), |v| parse_value("ig-steps", v))?,
            decoder,
            max_doc_tokens: get("max-doc-tokens")
                .map_or(Ok(512), |v| parse_value("max-doc-tokens", v))?,
            baseline: get("baseline").map_or(Ok(true), |v| parse_value("baseline", v))?,
        };
        if cfg.k_constraints < 1 || cfg.ig_steps < 1 || cfg.max_doc_tokens < 1 {
            return Err(Error::InvalidArgument(
                "k-constraints, ig-steps and max-doc-tokens must be at least 1".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let settings = parse_config_text(&text)?;
        Self::from_settings(&resolve_paths(
            settings,
            path.parent().unwrap_or(Path::new("")),
        ))
    }

    pub fn constraint_builder(&self) -> Result<ConstraintBuilder> {
        let scorer = match &self.scorer {
            Some(p) => ScorerModel::load(p)?,
            None => ScorerModel::seeded(self.scorer_dim, self.scorer_seed)?,
        };
        Ok(ConstraintBuilder {
            scorer,
            stops: match &self.stopwords {
                Some(p) => StopList::load(p)?,
                None => StopList::default(),
            },
            morphology: match &self.morphology {
                Some(p) => MorphologyTable::load(p)?,
                None => MorphologyTable::builtin(),
            },
            k: self.k_constraints,
            source: self.constraint_source,
            ig_steps: self.ig_steps,
            execution: self.decoder.execution,
        })
    }
}

/// One row of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
    pub constraints: Vec<Vec<String>>,
    pub satisfied: bool,
    pub cum_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSummary {
    pub rouge: RougeScores,
    pub satisfaction_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTests {
    pub r1: PairedTestResult,
    pub r2: PairedTestResult,
    pub rl: PairedTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleRow {
    pub id: String,
    pub constraints: Vec<Vec<String>>,
    pub prediction: String,
    pub satisfied: bool,
    pub rouge: RougeScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_prediction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_satisfied: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_rouge: Option<RougeScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub n_examples: usize,
    pub constraint_source: ConstraintSource,
    pub k_constraints: usize,
    pub decoder: DecoderConfig,
    pub constrained: SystemSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unconstrained: Option<SystemSummary>,
    /// Constrained vs unconstrained on per-example F1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_t_tests: Option<MetricTests>,
    pub examples: Vec<ExampleRow>,
}

/// Share of `flags` that are true; 1.0 for an empty slice.
pub fn satisfaction_rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 1.0;
    }
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

/// Per-metric paired tests on F1; `None` with fewer than two examples.
pub fn compare_systems(a: &[RougeScores], b: &[RougeScores]) -> Result<Option<MetricTests>> {
    if a.len() < 2 {
        return Ok(None);
    }
    let f1 = |xs: &[RougeScores], f: fn(&RougeScores) -> f64| xs.iter().map(f).collect::<Vec<_>>();
    Ok(Some(MetricTests {
        r1: paired_t_test(&f1(a, |s| s.r1.f1), &f1(b, |s| s.r1.f1))?,
        r2: paired_t_test(&f1(a, |s| s.r2.f1), &f1(b, |s| s.r2.f1))?,
        rl: paired_t_test(&f1(a, |s| s.rl.f1), &f1(b, |s| s.rl.f1))?,
    }))
}

struct Decoded {
    surfaces: Vec<String>,
    out: DecodeOutput,
    satisfied: bool,
}

fn decode_one(
    lm: &NGramLm,
    prompt: &[TokenId],
    cnf: &Cnf,
    compiled: Option<&CompiledCnf>,
    cfg: &DecoderConfig,
) -> Result<Decoded> {
    let out = match compiled {
        Some(c) => nld_decode(lm, prompt, c, cfg)?,
        None => beam_search(lm, prompt, cfg)?,
    };
    let surfaces = lm.vocab().decode(&out.tokens)?;
    let satisfied = cnf.satisfied_by(&surfaces);
    if compiled.is_some() && satisfied != out.all_satisfied {
        return Err(Error::InvalidArgument(format!(
            "decoder tracker ({}) disagrees with re-scan ({satisfied})",
            out.all_satisfied
        )));
    }
    Ok(Decoded {
        surfaces,
        out,
        satisfied,
    })
}

struct ExampleResult {
    cnf: Cnf,
    constrained: Decoded,
    baseline: Option<Decoded>,
    reference: Vec<String>,
}

fn run_example(
    ex: &QfsExample,
    lm: &NGramLm,
    builder: &ConstraintBuilder,
    cfg: &PipelineConfig,
) -> Result<ExampleResult> {
    let query = tokenize(&ex.query);
    let mut document = tokenize(&ex.document);
    if document.len() > cfg.max_doc_tokens {
        log::warn!(
            "example {}: document truncated from {} to {} tokens",
            ex.id,
            document.len(),
            cfg.max_doc_tokens
        );
        document.truncate(cfg.max_doc_tokens);
    }
    let (cnf, _) = builder.constrain(&query, &document)?;
    let compiled = CompiledCnf::new(&cnf, lm.vocab());
    let prompt = lm.vocab().encode(&lm_sequence(&ex.query, None));
    let constrained = decode_one(lm, &prompt, &cnf, Some(&compiled), &cfg.decoder)?;
    let baseline = if cfg.baseline {
        Some(decode_one(lm, &prompt, &cnf, None, &cfg.decoder)?)
    } else {
        None
    };
    Ok(ExampleResult {
        cnf,
        constrained,
        baseline,
        reference: tokenize(&ex.summary),
    })
}

/// Trains or loads the LM, constrains and decodes every test example, scores
/// and writes `predictions.jsonl`, optionally `predictions_unconstrained.jsonl`,
/// `report.json` and the LM (`lm.txt`) into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    let train = load_dataset(&cfg.train)?;
    if let Some(dev) = &cfg.dev {
        let n = load_dataset(dev)?.len();
        log::info!("dev split: {n} examples (not used for decoding)");
    }
    let test = load_dataset(&cfg.test)?;
    let lm = match &cfg.lm {
        Some(p) => NGramLm::load(p)?,
        None => train_lm(&train, cfg.lm_order, cfg.lm_k)?,
    };
    let builder = cfg.constraint_builder()?;
    log::info!(
        "vocabulary {} tokens, {} test examples",
        lm.vocab().len(),
        test.len()
    );

    let results: Vec<ExampleResult> = cfg
        .decoder
        .execution
        .map(&test, |ex| {
            run_example(ex, &lm, &builder, cfg).map_err(|e| Error::Example {
                id: ex.id.clone(),
                source: Box::new(e),
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut predictions = Vec::with_capacity(test.len());
    let mut baseline_predictions = Vec::new();
    let mut rows = Vec::with_capacity(test.len());
    let mut scores = Vec::with_capacity(test.len());
    let mut baseline_scores = Vec::new();
    for (ex, r) in test.iter().zip(&results) {
        let constraints = r.cnf.to_nested();
        // scored on the re-tokenized text, as `evaluate` does
        let text = r.constrained.surfaces.join(" ");
        let rouge = RougeScores::compute(&tokenize(&text), &r.reference);
        scores.push(rouge);
        predictions.push(Prediction {
            id: ex.id.clone(),
            prediction: text.clone(),
            constraints: constraints.clone(),
            satisfied: r.constrained.satisfied,
            cum_logprob: r.constrained.out.cum_logprob,
        });
        let mut row = ExampleRow {
            id: ex.id.clone(),
            constraints: constraints.clone(),
            prediction: text,
            satisfied: r.constrained.satisfied,
            rouge,
            baseline_prediction: None,
            baseline_satisfied: None,
            baseline_rouge: None,
        };
        if let Some(b) = &r.baseline {
            let btext = b.surfaces.join(" ");
            let brouge = RougeScores::compute(&tokenize(&btext), &r.reference);
            baseline_scores.push(brouge);
            baseline_predictions.push(Prediction {
                id: ex.id.clone(),
                prediction: btext.clone(),
                constraints,
                satisfied: b.satisfied,
                cum_logprob: b.out.cum_logprob,
            });
            row.baseline_prediction = Some(btext);
            row.baseline_satisfied = Some(b.satisfied);
            row.baseline_rouge = Some(brouge);
        }
        rows.push(row);
    }

    let sat: Vec<bool> = predictions.iter().map(|p| p.satisfied).collect();
    let report = Report {
        report_version: REPORT_VERSION,
        n_examples: test.len(),
        constraint_source: cfg.constraint_source,
        k_constraints: cfg.k_constraints,
        decoder: cfg.decoder.clone(),
        constrained: SystemSummary {
            rouge: RougeScores::mean(&scores),
            satisfaction_rate: satisfaction_rate(&sat),
        },
        unconstrained: cfg.baseline.then(|| SystemSummary {
            rouge: RougeScores::mean(&baseline_scores),
            satisfaction_rate: satisfaction_rate(
                &baseline_predictions
                    .iter()
                    .map(|p| p.satisfied)
                    .collect::<Vec<_>>(),
            ),
        }),
        paired_t_tests: if cfg.baseline {
            compare_systems(&scores, &baseline_scores)?
        } else {
            None
        },
        examples: rows,
    };

    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.output_dir.display()), e))?;
    write_jsonl(&cfg.output_dir.join("predictions.jsonl"), &predictions)?;
    if cfg.baseline {
        write_jsonl(
            &cfg.output_dir.join("predictions_unconstrained.jsonl"),
            &baseline_predictions,
        )?;
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let report_path = cfg.output_dir.join("report.json");
    std::fs::write(&report_path, json)
        .map_err(|e| Error::io(format!("writing {}", report_path.display()), e))?;
    if cfg.lm.is_none() {
        lm.save(&cfg.output_dir.join("lm.txt"))?;
    }
    Ok(report)
}

/// Reads `{"id", <field>}` JSONL rows into an id → text map. `fields` are
/// tried in order.
pub fn load_texts(path: &Path, fields: &[&str]) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let data_err = |line: usize, message: String| Error::Data {
        path: path.to_path_buf(),
        message: line_err(line, message).to_string(),
    };
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| data_err(lineno, format!("invalid JSON: {e}")))?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| data_err(lineno, "missing field id".into()))?;
        let text = fields
            .iter()
            .find_map(|f| value.get(*f).and_then(|v| v.as_str()))
            .ok_or_else(|| data_err(lineno, format!("missing field {}", fields.join("/"))))?;
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(data_err(lineno, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub r1: crate::eval::Prf,
    pub r2: crate::eval::Prf,
    pub rl: crate::eval::Prf,
    pub n_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<MetricTests>,
}

/// Per-example ROUGE of predictions against references, matched by id.
pub fn score_predictions(
    predictions: &BTreeMap<String, String>,
    references: &BTreeMap<String, String>,
) -> Result<Vec<RougeScores>> {
    references
        .iter()
        .map(|(id, reference)| {
            let pred = predictions
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no prediction for id {id}")))?;
            Ok(RougeScores::compute(&tokenize(pred), &tokenize(reference)))
        })
        .collect()
}

/// The `evaluate` command: mean ROUGE, plus paired tests against a second
/// prediction set when given.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    references: &BTreeMap<String, String>,
    compare: Option<&BTreeMap<String, String>>,
) -> Result<EvaluationReport> {
    let scores = score_predictions(predictions, references)?;
    let mean = RougeScores::mean(&scores);
    let compare = match compare {
        Some(other) => {
            let other_scores = score_predictions(other, references)?;
            compare_systems(&scores, &other_scores)?
        }
        None => None,
    };
    Ok(EvaluationReport {
        r1: mean.r1,
        r2: mean.r2,
        rl: mean.rl,
        n_examples: scores.len(),
        compare,
    })
}
