use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relconstrain::constraints::{Cnf, CompiledCnf, MorphologyTable};
use relconstrain::decoder::{beam_search, nld_decode_traced, DecoderConfig};
use relconstrain::lm::NGramLm;
use relconstrain::pipeline::{
    self, load_dataset, parse_config_text, resolve_paths, ConstraintBuilder, ConstraintSource,
    PipelineConfig,
};
use relconstrain::saliency::{select_constraint_tokens, ScorerModel, DEFAULT_DIM, DEFAULT_SEED};
use relconstrain::text::{tokenize, StopList};
use relconstrain::{Error, Execution, Result};

#[derive(Parser)]
#[command(
    name = "relconstrain",
    version,
    about = "Relevance-constrained query-focused summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// parsed once per process, so the variant size spread does not matter
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Train an n-gram LM on `query <sep> summary` sequences from a JSONL split.
    TrainLm {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
    },
    /// Print per-token saliency as TSV: token, raw, normalized, selected.
    Saliency {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constraint: ConstraintArgs,
    },
    /// Print the CNF built for a query/document pair, one clause per line.
    Constrain {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constraint: ConstraintArgs,
    },
    /// Decode a summary for a query with a trained LM.
    Decode {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        query: String,
        /// Build constraints from this document.
        #[arg(long, conflicts_with = "cnf")]
        document: Option<String>,
        /// Read constraints from a file in the `constrain` output format.
        #[arg(long)]
        cnf: Option<PathBuf>,
        /// Plain beam search, ignoring any constraints.
        #[arg(long)]
        unconstrained: bool,
        /// Write per-step beam traces as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[command(flatten)]
        decoder: DecoderArgs,
    },
    /// ROUGE of predictions against references, matched by id.
    Evaluate {
        /// JSONL with `id` and `prediction`.
        #[arg(long)]
        predictions: PathBuf,
        /// JSONL with `id` and `summary` (or `reference`).
        #[arg(long)]
        references: PathBuf,
        /// Second prediction set for paired t-tests.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run the full pipeline. Flags override the config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    query: String,
    #[arg(long)]
    document: String,
}

#[derive(Args)]
struct ConstraintArgs {
    /// Scorer file; a seeded random scorer is used otherwise.
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    scorer_seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    scorer_dim: usize,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    morphology: Option<PathBuf>,
    /// Number of constraint tokens.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Integrated-gradients steps.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// query, document or both.
    #[arg(long, default_value = "document")]
    source: String,
}

impl ConstraintArgs {
    fn builder(&self) -> Result<ConstraintBuilder> {
        if self.k < 1 || self.steps < 1 {
            return Err(Error::InvalidArgument(
                "--k and --steps must be at least 1".into(),
            ));
        }
        Ok(ConstraintBuilder {
            scorer: match &self.scorer {
                Some(p) => ScorerModel::load(p)?,
                None => ScorerModel::seeded(self.scorer_dim, self.scorer_seed)?,
            },
            stops: match &self.stopwords {
                Some(p) => StopList::load(p)?,
                None => StopList::default(),
            },
            morphology: match &self.morphology {
                Some(p) => MorphologyTable::load(p)?,
                None => MorphologyTable::builtin(),
            },
            k: self.k,
            source: self.source.parse::<ConstraintSource>()?,
            ig_steps: self.steps,
            execution: Execution::default(),
        })
    }
}

#[derive(Args)]
struct DecoderArgs {
    #[arg(long, default_value_t = 20)]
    beam_width: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
    #[arg(long, default_value_t = 20)]
    expand_top: usize,
    #[arg(long, default_value_t = 1)]
    clause_slack: usize,
    /// Defaults to twice the beam width.
    #[arg(long)]
    likelihood_keep: Option<usize>,
    #[arg(long)]
    sequential: bool,
}

impl DecoderArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig {
            beam_width: self.beam_width,
            lambda: self.lambda,
            max_len: self.max_len,
            expand_top: self.expand_top,
            clause_slack: self.clause_slack,
            likelihood_keep: self.likelihood_keep.unwrap_or(2 * self.beam_width),
            execution: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` file; relative paths resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    dev: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    lm_order: Option<String>,
    #[arg(long)]
    lm_k: Option<String>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    scorer_seed: Option<String>,
    #[arg(long)]
    scorer_dim: Option<String>,
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    morphology: Option<String>,
    #[arg(long)]
    k_constraints: Option<String>,
    #[arg(long)]
    constraint_source: Option<String>,
    #[arg(long)]
    ig_steps: Option<String>,
    #[arg(long)]
    beam_width: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    max_len: Option<String>,
    #[arg(long)]
    expand_top: Option<String>,
    #[arg(long)]
    clause_slack: Option<String>,
    #[arg(long)]
    likelihood_keep: Option<String>,
    #[arg(long)]
    max_doc_tokens: Option<String>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    execution: Option<String>,
}

impl PipelineArgs {
    fn settings(&self) -> Result<Vec<(String, String)>> {
        let mut settings = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    context: format!("reading config {}", path.display()),
                    source: e,
                })?;
                resolve_paths(
                    parse_config_text(&text)?,
                    path.parent().unwrap_or(Path::new("")),
                )
            }
            None => Vec::new(),
        };
        let flags = [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("output-dir", &self.output_dir),
            ("lm", &self.lm),
            ("lm-order", &self.lm_order),
            ("lm-k", &self.lm_k),
            ("scorer", &self.scorer),
            ("scorer-seed", &self.scorer_seed),
            ("scorer-dim", &self.scorer_dim),
            ("stopwords", &self.stopwords),
            ("morphology", &self.morphology),
            ("k-constraints", &self.k_constraints),
            ("constraint-source", &self.constraint_source),
            ("ig-steps", &self.ig_steps),
            ("beam-width", &self.beam_width),
            ("lambda", &self.lambda),
            ("max-len", &self.max_len),
            ("expand-top", &self.expand_top),
            ("clause-slack", &self.clause_slack),
            ("likelihood-keep", &self.likelihood_keep),
            ("max-doc-tokens", &self.max_doc_tokens),
            ("baseline", &self.baseline),
            ("execution", &self.execution),
        ];
        settings.extend(
            flags
                .into_iter()
                .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))),
        );
        Ok(settings)
    }
}

fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            context: "writing to stdout".into(),
            source: e,
        })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainLm {
            train,
            output,
            order,
            smoothing,
        } => {
            let examples = load_dataset(&train)?;
            let lm = pipeline::train_lm(&examples, order, smoothing)?;
            lm.save(&output)?;
            log::info!("vocabulary {} tokens", lm.vocab().len());
        }
        Command::Saliency { input, constraint } => {
            let builder = constraint.builder()?;
            let saliency = builder.saliency(&tokenize(&input.query), &tokenize(&input.document))?;
            let selected = select_constraint_tokens(&saliency, &builder.stops, builder.k);
            write_stdout(&saliency.to_tsv(&selected))?;
        }
        Command::Constrain { input, constraint } => {
            let builder = constraint.builder()?;
            let (cnf, _) =
                builder.constrain(&tokenize(&input.query), &tokenize(&input.document))?;
            write_stdout(&cnf.to_debug_string())?;
        }
        Command::Decode {
            lm,
            query,
            document,
            cnf,
            unconstrained,
            trace,
            constraint,
            decoder,
        } => {
            let lm = NGramLm::load(&lm)?;
            let cfg = decoder.config();
            let cnf = match (&cnf, &document) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                        context: format!("reading {}", path.display()),
                        source: e,
                    })?;
                    Cnf::parse_debug(&text).map_err(|e| Error::Data {
                        path: path.clone(),
                        message: e.to_string(),
                    })?
                }
                (None, Some(doc)) => {
                    constraint
                        .builder()?
                        .constrain(&tokenize(&query), &tokenize(doc))?
                        .0
                }
                (None, None) => Cnf::empty(),
            };
            let prompt = lm.vocab().encode(&pipeline::lm_sequence(&query, None));
            let (out, steps) = if unconstrained {
                (beam_search(&lm, &prompt, &cfg)?, Vec::new())
            } else {
                nld_decode_traced(&lm, &prompt, &CompiledCnf::new(&cnf, lm.vocab()), &cfg)?
            };
            if let Some(path) = trace {
                pipeline::write_jsonl(&path, &steps)?;
            }
            let surfaces = lm.vocab().decode(&out.tokens)?;
            let row = serde_json::json!({
                "prediction": surfaces.join(" "),
                "constraints": cnf.to_nested(),
                "satisfied": cnf.satisfied_by(&surfaces),
                "finished": out.finished,
                "cum_logprob": out.cum_logprob,
                "nld_score": out.nld_score,
            });
            write_stdout(&format!("{row}\n"))?;
        }
        Command::Evaluate {
            predictions,
            references,
            compare,
        } => {
            let preds = pipeline::load_texts(&predictions, &["prediction"])?;
            let refs = pipeline::load_texts(&references, &["summary", "reference"])?;
            let other = compare
                .map(|p| pipeline::load_texts(&p, &["prediction"]))
                .transpose()?;
            let report = pipeline::evaluate(&preds, &refs, other.as_ref())?;
            write_stdout(&(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Pipeline(args) => {
            let cfg = PipelineConfig::from_settings(&args.settings()?)?;
            let report = pipeline::run_pipeline(&cfg)?;
            let mut summary = serde_json::json!({
                "output_dir": cfg.output_dir.display().to_string(),
                "n_examples": report.n_examples,
                "constrained": report.constrained,
            });
            if let Some(u) = &report.unconstrained {
                summary["unconstrained"] = serde_json::to_value(u)?;
            }
            write_stdout(&(serde_json::to_string_pretty(&summary)? + "\n"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
