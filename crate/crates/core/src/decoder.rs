//! Beam search and the constrained (NeuroLogic-style) decoder.
//!
//! Each constrained step expands the live beam, prunes by score and by number
//! of satisfied clauses, groups survivors by their satisfied-clause set and
//! refills the beam round-robin across groups. Scores are
//! `cum_logprob + λ · max_partial_ratio`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::constraints::{ClauseSet, CompiledCnf, ConstraintTracker};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lm::LanguageModel;
use crate::text::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoderConfig {
    pub beam_width: usize,
    /// Weight of the partial-match bonus.
    pub lambda: f64,
    /// Maximum generated tokens, EOS included.
    pub max_len: usize,
    /// Next tokens considered per live candidate.
    pub expand_top: usize,
    /// Candidates may trail the best satisfied-clause count by this much.
    pub clause_slack: usize,
    /// Expansions kept by score before clause pruning.
    pub likelihood_keep: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_width: 20,
            lambda: 0.1,
            max_len: 32,
            expand_top: 20,
            clause_slack: 1,
            likelihood_keep: 40,
            execution: Execution::default(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.beam_width < 1 {
            return bad("beam_width must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.max_len < 1 {
            return bad("max_len must be at least 1");
        }
        if self.expand_top < 1 {
            return bad("expand_top must be at least 1");
        }
        if self.likelihood_keep < self.beam_width {
            return bad("likelihood_keep must be at least beam_width");
        }
        Ok(())
    }
}

/// A partial or finished hypothesis of the constrained decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    /// Generated tokens, without the prompt.
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    pub tracker: ConstraintTracker,
    pub nld_score: f64,
    pub finished: bool,
}

impl BeamCandidate {
    fn root(cnf: &CompiledCnf) -> Self {
        BeamCandidate {
            tokens: Vec::new(),
            cum_logprob: 0.0,
            tracker: ConstraintTracker::new(cnf),
            nld_score: 0.0,
            finished: false,
        }
    }

    fn extend(&self, cnf: &CompiledCnf, lambda: f64, token: TokenId, logprob: f64) -> Self {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        let mut cand = BeamCandidate {
            tokens,
            cum_logprob: self.cum_logprob + logprob,
            tracker: self.tracker.advance(cnf, token),
            nld_score: 0.0,
            finished: token == Vocabulary::EOS_ID,
        };
        cand.nld_score = nld_score(&cand, cnf, lambda);
        cand
    }
}

/// `cum_logprob + λ · max_partial_ratio`.
pub fn nld_score(cand: &BeamCandidate, cnf: &CompiledCnf, lambda: f64) -> f64 {
    cand.cum_logprob + lambda * cand.tracker.max_partial_ratio(cnf)
}

/// Higher score first, then lexicographically smaller (lower ids, shorter).
fn by_score(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn by_final(a: &BeamCandidate, b: &BeamCandidate, cnf: &CompiledCnf) -> Ordering {
    let fa = a.tracker.all_satisfied(cnf);
    let fb = b.tracker.all_satisfied(cnf);
    fb.cmp(&fa)
        .then_with(|| by_score(a.nld_score, &a.tokens, b.nld_score, &b.tokens))
}

/// The `n` most likely next tokens, ties to the lower id.
fn top_tokens(logprobs: &[f64], n: usize) -> Vec<(TokenId, f64)> {
    let mut idx: Vec<usize> = (0..logprobs.len()).collect();
    let cmp = |a: &usize, b: &usize| logprobs[*b].total_cmp(&logprobs[*a]).then(a.cmp(b));
    if n < idx.len() {
        idx.select_nth_unstable_by(n, cmp);
        idx.truncate(n);
    }
    idx.sort_unstable_by(cmp);
    idx.into_iter()
        .map(|i| (i as TokenId, logprobs[i]))
        .collect()
}

fn expand_all<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &[TokenId],
    live: &[Vec<TokenId>],
    expand_top: usize,
    exec: Execution,
) -> Result<Vec<Vec<(TokenId, f64)>>> {
    exec.map(live, |tokens| {
        let mut full = Vec::with_capacity(prompt.len() + tokens.len());
        full.extend_from_slice(prompt);
        full.extend_from_slice(tokens);
        let lp = lm.next_token_logprobs(&full)?;
        if lp.len() != lm.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "language model returned {} log-probs for a vocabulary of {}",
                lp.len(),
                lm.vocab_size()
            )));
        }
        Ok(top_tokens(&lp, expand_top))
    })
    .into_iter()
    .collect()
}

fn strip_eos(mut tokens: Vec<TokenId>) -> Vec<TokenId> {
    if tokens.last() == Some(&Vocabulary::EOS_ID) {
        tokens.pop();
    }
    tokens
}

/// Result of a decoding run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeOutput {
    /// Generated tokens without the trailing EOS.
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    pub nld_score: f64,
    /// Ended with EOS rather than at `max_len`.
    pub finished: bool,
    pub all_satisfied: bool,
    pub satisfied_mask: u64,
    /// Number of groups formed at each step.
    pub group_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateTrace {
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    pub nld_score: f64,
    pub satisfied_mask: u64,
}

impl From<&BeamCandidate> for CandidateTrace {
    fn from(c: &BeamCandidate) -> Self {
        CandidateTrace {
            tokens: c.tokens.clone(),
            cum_logprob: c.cum_logprob,
            nld_score: c.nld_score,
            satisfied_mask: c.tracker.satisfied().bits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTrace {
    pub satisfied_mask: u64,
    pub size: usize,
}

/// One decoding step, as emitted by `--trace`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub expansions: usize,
    pub after_likelihood_prune: usize,
    pub after_clause_prune: usize,
    pub finished_added: usize,
    pub groups: Vec<GroupTrace>,
    pub beam: Vec<CandidateTrace>,
}

/// Plain beam search on cumulative log-probability.
///
/// Per step: take the `expand_top` best tokens of every live hypothesis, keep
/// the best `likelihood_keep` expansions, retire those ending in EOS and keep
/// the best `beam_width` of the rest. Stops early once a finished hypothesis
/// beats every live one.
pub fn beam_search<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &[TokenId],
    cfg: &DecoderConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    struct Hyp {
        tokens: Vec<TokenId>,
        score: f64,
    }
    let cmp = |a: &Hyp, b: &Hyp| by_score(a.score, &a.tokens, b.score, &b.tokens);

    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    let mut steps = 0;
    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        steps += 1;
        let seqs: Vec<Vec<TokenId>> = live.iter().map(|h| h.tokens.clone()).collect();
        let tops = expand_all(lm, prompt, &seqs, cfg.expand_top, cfg.execution)?;
        let mut expansions: Vec<Hyp> = live
            .iter()
            .zip(tops)
            .flat_map(|(h, top)| {
                top.into_iter().map(move |(tok, lp)| {
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    Hyp {
                        tokens,
                        score: h.score + lp,
                    }
                })
            })
            .collect();
        expansions.sort_by(cmp);
        expansions.truncate(cfg.likelihood_keep);
        let (done, rest): (Vec<Hyp>, Vec<Hyp>) = expansions
            .into_iter()
            .partition(|h| h.tokens.last() == Some(&Vocabulary::EOS_ID));
        finished.extend(done);
        live = rest;
        live.truncate(cfg.beam_width);

        if let Some(best) = finished.iter().min_by(|a, b| cmp(a, b)) {
            if live.iter().all(|h| h.score < best.score) {
                break;
            }
        }
    }

    let (best, was_finished) = match finished.into_iter().min_by(cmp) {
        Some(h) => (h, true),
        None => (
            live.into_iter()
                .min_by(cmp)
                .expect("beam search keeps at least one hypothesis"),
            false,
        ),
    };
    Ok(DecodeOutput {
        tokens: strip_eos(best.tokens),
        cum_logprob: best.score,
        nld_score: best.score,
        finished: was_finished,
        all_satisfied: true,
        satisfied_mask: 0,
        group_counts: vec![1; steps],
    })
}

/// Constrained decoding. See [`nld_decode_traced`] for per-step traces.
pub fn nld_decode<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &[TokenId],
    cnf: &CompiledCnf,
    cfg: &DecoderConfig,
) -> Result<DecodeOutput> {
    run_nld(lm, prompt, cnf, cfg, None)
}

pub fn nld_decode_traced<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &[TokenId],
    cnf: &CompiledCnf,
    cfg: &DecoderConfig,
) -> Result<(DecodeOutput, Vec<StepTrace>)> {
    let mut trace = Vec::new();
    let out = run_nld(lm, prompt, cnf, cfg, Some(&mut trace))?;
    Ok((out, trace))
}

fn debug_check(cand: &BeamCandidate, cnf: &CompiledCnf, lambda: f64) {
    if cfg!(debug_assertions) {
        let fresh = ConstraintTracker::rescan(cnf, &cand.tokens);
        debug_assert_eq!(fresh, cand.tracker, "tracker drifted from re-scan");
        let score = cand.cum_logprob + lambda * fresh.max_partial_ratio(cnf);
        debug_assert!(
            score.to_bits() == cand.nld_score.to_bits() || (score - cand.nld_score).abs() <= 1e-12,
            "stored score {} != recomputed {}",
            cand.nld_score,
            score
        );
    }
}

fn run_nld<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &[TokenId],
    cnf: &CompiledCnf,
    cfg: &DecoderConfig,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let rank = |a: &BeamCandidate, b: &BeamCandidate| {
        by_score(a.nld_score, &a.tokens, b.nld_score, &b.tokens)
    };

    let mut live = vec![BeamCandidate::root(cnf)];
    let mut finished: Vec<BeamCandidate> = Vec::new();
    let mut group_counts = Vec::new();

    for step in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        // expand
        let seqs: Vec<Vec<TokenId>> = live.iter().map(|c| c.tokens.clone()).collect();
        let tops = expand_all(lm, prompt, &seqs, cfg.expand_top, cfg.execution)?;
        let mut expansions: Vec<BeamCandidate> = live
            .iter()
            .zip(&tops)
            .flat_map(|(c, top)| {
                top.iter()
                    .map(move |&(tok, lp)| c.extend(cnf, cfg.lambda, tok, lp))
            })
            .collect();
        let n_expansions = expansions.len();

        // prune: likelihood, then satisfied-clause count
        expansions.sort_by(rank);
        expansions.truncate(cfg.likelihood_keep);
        let after_likelihood = expansions.len();
        let best_count = expansions
            .iter()
            .map(|c| c.tracker.satisfied().count() as usize)
            .max()
            .unwrap_or(0);
        expansions
            .retain(|c| c.tracker.satisfied().count() as usize + cfg.clause_slack >= best_count);
        let after_clause = expansions.len();
        for c in &expansions {
            debug_check(c, cnf, cfg.lambda);
        }

        let (done, survivors): (Vec<_>, Vec<_>) = expansions.into_iter().partition(|c| c.finished);
        let finished_added = done.len();
        finished.extend(done);

        // group: more satisfied clauses first, then by mask; survivors are
        // already in score order, so each group is too.
        let mut groups: BTreeMap<(std::cmp::Reverse<u32>, ClauseSet), Vec<BeamCandidate>> =
            BTreeMap::new();
        for c in survivors {
            let sat = c.tracker.satisfied();
            groups
                .entry((std::cmp::Reverse(sat.count()), sat))
                .or_default()
                .push(c);
        }
        group_counts.push(groups.len());
        let group_trace: Vec<GroupTrace> = groups
            .iter()
            .map(|((_, mask), members)| GroupTrace {
                satisfied_mask: mask.bits(),
                size: members.len(),
            })
            .collect();

        // select: round-robin over groups
        let mut queues: Vec<std::vec::IntoIter<BeamCandidate>> =
            groups.into_values().map(Vec::into_iter).collect();
        let mut beam = Vec::with_capacity(cfg.beam_width);
        'fill: while beam.len() < cfg.beam_width {
            let mut took = false;
            for q in queues.iter_mut() {
                if beam.len() == cfg.beam_width {
                    break 'fill;
                }
                if let Some(c) = q.next() {
                    beam.push(c);
                    took = true;
                }
            }
            if !took {
                break;
            }
        }
        live = beam;

        if let Some(t) = trace.as_deref_mut() {
            t.push(StepTrace {
                step,
                expansions: n_expansions,
                after_likelihood_prune: after_likelihood,
                after_clause_prune: after_clause,
                finished_added,
                groups: group_trace,
                beam: live.iter().map(CandidateTrace::from).collect(),
            });
        }

        // A fully satisfied finished candidate scores its cum_logprob, which
        // no live candidate can exceed once behind it.
        if let Some(best) = finished.iter().min_by(|a, b| by_final(a, b, cnf)) {
            if best.tracker.all_satisfied(cnf)
                && live.iter().all(|c| c.cum_logprob < best.nld_score)
            {
                break;
            }
        }
    }

    let best = finished
        .iter()
        .min_by(|a, b| by_final(a, b, cnf))
        .or_else(|| live.iter().min_by(|a, b| by_final(a, b, cnf)))
        .cloned()
        .expect("decoder keeps at least one candidate");
    Ok(DecodeOutput {
        all_satisfied: best.tracker.all_satisfied(cnf),
        satisfied_mask: best.tracker.satisfied().bits(),
        finished: best.finished,
        cum_logprob: best.cum_logprob,
        nld_score: best.nld_score,
        tokens: strip_eos(best.tokens),
        group_counts,
    })
}
