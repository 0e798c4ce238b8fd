//! Next-token probability sources.
//!
//! [`LanguageModel`] is the contract the decoder runs against; [`NGramLm`] is
//! the built-in add-k smoothed n-gram model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{TokenId, Vocabulary};

/// Full next-token distributions in log space.
///
/// For every valid prefix, `exp` of the returned values sums to 1 within
/// 1e-9. Implementations must be safe to query from several threads.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Log-probability for every vocabulary id given the generated prefix.
    /// The prefix does not include a leading BOS.
    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

impl<L: LanguageModel + ?Sized> LanguageModel for &L {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_token_logprobs(prefix)
    }
}

/// `ln Σ exp(x)`, stable for large magnitudes.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextCounts {
    next: HashMap<TokenId, u64>,
    total: u64,
}

/// Add-k smoothed n-gram model.
///
/// `P(v | ctx) = (count(ctx, v) + k) / (count(ctx) + k |V|)`, where `ctx` is
/// the last `order - 1` tokens of the BOS-padded prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    smoothing_k: f64,
    vocab: Vocabulary,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

const LM_MAGIC: &str = "RELCONSTRAIN-LM";
const LM_VERSION: &str = "v1";

impl NGramLm {
    /// Trains on id sequences. Each sentence is padded with `order - 1` BOS
    /// tokens on the left and one EOS on the right.
    pub fn train(
        vocab: Vocabulary,
        corpus: &[Vec<TokenId>],
        order: usize,
        smoothing_k: f64,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(Error::InvalidArgument(
                "smoothing_k must be positive and finite".into(),
            ));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        for sentence in corpus {
            if let Some(&bad) = sentence.iter().find(|&&id| id as usize >= vocab.len()) {
                return Err(Error::TokenOutOfVocabulary(bad));
            }
            let mut padded = vec![Vocabulary::BOS_ID; order - 1];
            padded.extend_from_slice(sentence);
            padded.push(Vocabulary::EOS_ID);
            for window in padded.windows(order) {
                let (ctx, next) = window.split_at(order - 1);
                let entry = counts.entry(ctx.to_vec()).or_default();
                *entry.next.entry(next[0]).or_insert(0) += 1;
                entry.total += 1;
            }
        }
        Ok(NGramLm {
            order,
            smoothing_k,
            vocab,
            counts,
        })
    }

    /// Tokenized-surface convenience: builds the vocabulary from the corpus.
    pub fn train_surfaces<S: AsRef<str>>(
        corpus: &[Vec<S>],
        order: usize,
        smoothing_k: f64,
    ) -> Result<Self> {
        let vocab = Vocabulary::build(corpus)?;
        let ids: Vec<Vec<TokenId>> = corpus.iter().map(|s| vocab.encode(s)).collect();
        Self::train(vocab, &ids, order, smoothing_k)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let mut ctx = vec![Vocabulary::BOS_ID; n.saturating_sub(prefix.len())];
        ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(n)..]);
        ctx
    }

    /// Smoothed probability of `next` after `prefix`.
    pub fn prob(&self, prefix: &[TokenId], next: TokenId) -> Result<f64> {
        self.check_ids(prefix)?;
        self.check_ids(&[next])?;
        let denom_k = self.smoothing_k * self.vocab.len() as f64;
        Ok(match self.counts.get(&self.context(prefix)) {
            Some(c) => {
                let n = c.next.get(&next).copied().unwrap_or(0) as f64;
                (n + self.smoothing_k) / (c.total as f64 + denom_k)
            }
            None => 1.0 / self.vocab.len() as f64,
        })
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            Some(&bad) => Err(Error::TokenOutOfVocabulary(bad)),
            None => Ok(()),
        }
    }

    /// Versioned, line-oriented text form. Count records are sorted so the
    /// output is stable.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{LM_MAGIC} {LM_VERSION}");
        let _ = writeln!(out, "order={}", self.order);
        let _ = writeln!(out, "k={}", self.smoothing_k);
        for (id, s) in self.vocab.surfaces().iter().enumerate() {
            let _ = writeln!(out, "V {id} {s}");
        }
        let mut records: Vec<(&Vec<TokenId>, TokenId, u64)> = self
            .counts
            .iter()
            .flat_map(|(ctx, c)| c.next.iter().map(move |(&t, &n)| (ctx, t, n)))
            .collect();
        records.sort_unstable();
        for (ctx, tok, n) in records {
            out.push('C');
            for id in ctx {
                let _ = write!(out, " {id}");
            }
            let _ = writeln!(out, " | {tok} {n}");
        }
        out.push_str("END\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let malformed = |msg: String| Error::MalformedLm(msg);
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| malformed("empty file".into()))?;
        let version = header
            .strip_prefix(LM_MAGIC)
            .map(str::trim)
            .ok_or_else(|| malformed(format!("bad header {header:?}")))?;
        if version != LM_VERSION {
            return Err(Error::UnsupportedVersion(version.to_string()));
        }

        let mut field = |key: &str| -> Result<String> {
            match lines.next() {
                Some((_, l)) => l
                    .strip_prefix(key)
                    .and_then(|r| r.strip_prefix('='))
                    .map(str::to_string)
                    .ok_or_else(|| malformed(format!("expected {key}=, found {l:?}"))),
                None => Err(malformed(format!("missing {key}"))),
            }
        };
        let order: usize = field("order")?
            .parse()
            .map_err(|e| malformed(format!("order: {e}")))?;
        let smoothing_k: f64 = field("k")?
            .parse()
            .map_err(|e| malformed(format!("k: {e}")))?;

        let mut surfaces = Vec::new();
        let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        let mut ended = false;
        for (lineno, line) in lines {
            let at = |m: &str| malformed(format!("line {}: {m}", lineno + 1));
            if ended {
                return Err(at("content after END"));
            }
            if line == "END" {
                ended = true;
            } else if let Some(rest) = line.strip_prefix("V ") {
                if !counts.is_empty() {
                    return Err(at("vocabulary line after count records"));
                }
                let (id, surface) = rest.split_once(' ').ok_or_else(|| at("bad V line"))?;
                let id: usize = id.parse().map_err(|_| at("bad vocabulary id"))?;
                if id != surfaces.len() {
                    return Err(at("vocabulary ids must be dense and ordered"));
                }
                surfaces.push(surface.to_string());
            } else if let Some(rest) = line.strip_prefix('C') {
                let (ctx, tail) = rest.split_once('|').ok_or_else(|| at("bad C line"))?;
                let ctx: Vec<TokenId> = ctx
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| at("bad context id")))
                    .collect::<Result<_>>()?;
                let tail: Vec<&str> = tail.split_whitespace().collect();
                let [tok, n] = tail[..] else {
                    return Err(at("bad count record"));
                };
                let tok: TokenId = tok.parse().map_err(|_| at("bad token id"))?;
                let n: u64 = n.parse().map_err(|_| at("bad count"))?;
                if n == 0 || ctx.len() + 1 != order {
                    return Err(at("inconsistent count record"));
                }
                if ctx
                    .iter()
                    .chain([&tok])
                    .any(|&id| id as usize >= surfaces.len())
                {
                    return Err(at("id out of vocabulary"));
                }
                let entry = counts.entry(ctx).or_default();
                if entry.next.insert(tok, n).is_some() {
                    return Err(at("duplicate count record"));
                }
                entry.total += n;
            } else {
                return Err(at("unrecognized line"));
            }
        }
        if !ended {
            return Err(malformed("truncated (missing END)".into()));
        }
        if order < 1 || !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(malformed("invalid order or k".into()));
        }
        let vocab = Vocabulary::from_surfaces(surfaces).map_err(|e| malformed(e.to_string()))?;
        Ok(NGramLm {
            order,
            smoothing_k,
            vocab,
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing LM {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading LM {}", path.display()), e))?;
        Self::from_text(&text)
    }
}

impl LanguageModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check_ids(prefix)?;
        let v = self.vocab.len();
        let Some(c) = self.counts.get(&self.context(prefix)) else {
            return Ok(vec![-(v as f64).ln(); v]);
        };
        let denom = (c.total as f64 + self.smoothing_k * v as f64).ln();
        let base = self.smoothing_k.ln() - denom;
        let mut out = vec![base; v];
        for (&tok, &n) in &c.next {
            out[tok as usize] = (n as f64 + self.smoothing_k).ln() - denom;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn two_sentence_model() -> NGramLm {
        NGramLm::train_surfaces(&[s(&["a", "b"]), s(&["a", "c"])], 2, 1.0).unwrap()
    }

    #[test]
    fn add_one_arithmetic() {
        let lm = two_sentence_model();
        assert_eq!(lm.vocab_size(), 6);
        let a = lm.vocab().id("a").unwrap();
        let b = lm.vocab().id("b").unwrap();
        assert!((lm.prob(&[a], b).unwrap() - 0.25).abs() < 1e-15);
        let lp = lm.next_token_logprobs(&[a]).unwrap();
        assert!((lp[b as usize] - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mle_limit() {
        let lm = NGramLm::train_surfaces(&[s(&["a", "b"])], 2, 1e-12).unwrap();
        let a = lm.vocab().id("a").unwrap();
        let b = lm.vocab().id("b").unwrap();
        assert!((lm.prob(&[a], b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_context_uniform() {
        let lm = NGramLm::train_surfaces(&[s(&["a", "b"]), s(&["a", "c"])], 3, 0.5).unwrap();
        let c = lm.vocab().id("c").unwrap();
        // (c, c) never occurs as a trigram context.
        for p in lm.next_token_logprobs(&[c, c]).unwrap() {
            assert!((p.exp() - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(NGramLm::train_surfaces(&[s(&["a"])], 0, 1.0).is_err());
        assert!(matches!(
            NGramLm::train_surfaces::<String>(&[], 2, 1.0),
            Err(Error::EmptyCorpus)
        ));
        assert!(NGramLm::train_surfaces(&[s(&["a"])], 2, 0.0).is_err());
        let lm = two_sentence_model();
        let err = lm.next_token_logprobs(&[42]).unwrap_err();
        assert!(err.to_string().contains("token out of vocabulary"));
    }

    #[test]
    fn markov_property() {
        let lm = NGramLm::train_surfaces(
            &[s(&["a", "b", "c", "a", "b"]), s(&["b", "c", "c"])],
            3,
            0.3,
        )
        .unwrap();
        let long = lm.next_token_logprobs(&[3, 4, 5, 3, 4]).unwrap();
        let short = lm.next_token_logprobs(&[3, 4]).unwrap();
        assert_eq!(long, short);
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let lm = two_sentence_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        lm.save(&path).unwrap();
        let back = NGramLm::load(&path).unwrap();
        assert_eq!(back, lm);
        for prefix in [vec![], vec![3], vec![4], vec![0, 5], vec![1]] {
            let x = lm.next_token_logprobs(&prefix).unwrap();
            let y = back.next_token_logprobs(&prefix).unwrap();
            assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let text = two_sentence_model().to_text();
        for cut in [text.len() / 3, text.len() - 4, text.len() - 10] {
            let err = NGramLm::from_text(&text[..cut]).unwrap_err();
            assert!(err.to_string().contains("malformed LM file"), "{err}");
        }
    }

    #[test]
    fn other_version_unsupported() {
        let text = two_sentence_model()
            .to_text()
            .replace("RELCONSTRAIN-LM v1", "RELCONSTRAIN-LM v2");
        let err = NGramLm::from_text(&text).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d"]), 0..6)
                .prop_map(|v| v.into_iter().map(String::from).collect()),
            1..5,
        )
    }

    proptest! {
        #[test]
        fn normalized(corpus in arb_corpus(), order in 1usize..4, k in 0.01f64..3.0,
                      prefix in proptest::collection::vec(0u32..7, 0..5)) {
            let lm = NGramLm::train_surfaces(&corpus, order, k).unwrap();
            let prefix: Vec<u32> = prefix.into_iter().filter(|&t| (t as usize) < lm.vocab_size()).collect();
            let lp = lm.next_token_logprobs(&prefix).unwrap();
            prop_assert!(logsumexp(&lp).abs() < 1e-9);
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn smoothing_moves_toward_uniform(corpus in arb_corpus(), k in 0.01f64..2.0, bump in 0.01f64..5.0) {
            let lo = NGramLm::train_surfaces(&corpus, 2, k).unwrap();
            let hi = NGramLm::train_surfaces(&corpus, 2, k + bump).unwrap();
            let uniform = 1.0 / lo.vocab_size() as f64;
            for ctx in 0..lo.vocab_size() as u32 {
                let a = lo.next_token_logprobs(&[ctx]).unwrap();
                let b = hi.next_token_logprobs(&[ctx]).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((y.exp() - uniform).abs() <= (x.exp() - uniform).abs() + 1e-12);
                }
            }
        }
    }
}
