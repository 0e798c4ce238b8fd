//! Relevance-constrained query-focused summarization.
//!
//! The crate picks salient document tokens with Integrated Gradients over a
//! differentiable relevance scorer, turns them into positive lexical
//! constraints in conjunctive normal form, and decodes a summary with a
//! constraint-aware beam search (prune, group by satisfied-clause set, select
//! round-robin) on top of any [`lm::LanguageModel`].
//!
//! Modules, bottom-up:
//!
//! - [`text`]: tokenizer, vocabulary, stopwords.
//! - [`lm`]: language model trait plus an add-k smoothed n-gram model.
//! - [`saliency`]: relevance scorers, Integrated Gradients, token selection.
//! - [`constraints`]: CNF construction, word forms, satisfaction tracking.
//! - [`decoder`]: plain beam search and the constrained decoder.
//! - [`eval`]: ROUGE-1/2/L and the paired t-test.
//! - [`pipeline`]: dataset IO, configuration, end-to-end runs.
//!
//! Data-parallel loops go through [`exec::Execution`]; building without the
//! default `parallel` feature makes every loop sequential.

pub mod constraints;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod lm;
pub mod pipeline;
pub mod saliency;
pub mod text;

pub use error::{Error, Result};
pub use exec::Execution;
