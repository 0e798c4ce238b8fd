//! Gradient attribution of relevance onto individual tokens.
//!
//! A [`DifferentiableScorer`] maps query and document embeddings to a relevance
//! logit. Integrated Gradients from the all-zero baseline gives one scalar per
//! document token; the top content tokens become decoding constraints.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::text::{is_content_token, StopList};

pub type Embedding = Vec<f64>;

/// Default number of interpolation steps.
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_SEED: u64 = 42;
const INIT_SD: f64 = 0.1;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean(vectors: &[Embedding], dim: usize) -> Embedding {
    let mut out = vec![0.0; dim];
    if vectors.is_empty() {
        return out;
    }
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pointwise cross-entropy against the "relevant" label: `-ln sigmoid(f)`.
pub fn loss_from_logit(f_value: f64) -> f64 {
    // softplus(-f), stable on both tails
    let x = -f_value;
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Relevance logit with an analytic gradient w.r.t. the document embeddings.
pub trait DifferentiableScorer: Sync {
    fn forward(&self, query: &[Embedding], doc: &[Embedding]) -> f64;

    /// `∂f/∂doc[i]` for every document token.
    fn grad_doc(&self, query: &[Embedding], doc: &[Embedding]) -> Vec<Embedding>;
}

/// `f = mean(query)ᵀ · W · mean(doc)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearScorer {
    dim: usize,
    /// Row-major `dim × dim`.
    w: Vec<f64>,
}

impl BilinearScorer {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 || rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "bilinear matrix must be {dim}x{dim}"
            )));
        }
        let w: Vec<f64> = rows.into_iter().flatten().collect();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(BilinearScorer { dim, w })
    }

    /// Gaussian `N(0, 0.1²)` entries from a seeded ChaCha stream.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4947_4854_5321);
        let normal = Normal::new(0.0, INIT_SD).expect("valid sd");
        BilinearScorer {
            dim,
            w: (0..dim * dim).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.dim..(r + 1) * self.dim]
    }

    /// `Wᵀ · v`
    fn transpose_mul(&self, v: &[f64]) -> Embedding {
        let mut out = vec![0.0; self.dim];
        for (r, vr) in v.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += vr * w;
            }
        }
        out
    }

    fn mul(&self, v: &[f64]) -> Embedding {
        (0..self.dim).map(|r| dot(self.row(r), v)).collect()
    }
}

impl DifferentiableScorer for BilinearScorer {
    fn forward(&self, query: &[Embedding], doc: &[Embedding]) -> f64 {
        let q = mean(query, self.dim);
        let d = mean(doc, self.dim);
        dot(&q, &self.mul(&d))
    }

    fn grad_doc(&self, query: &[Embedding], doc: &[Embedding]) -> Vec<Embedding> {
        if doc.is_empty() {
            return Vec::new();
        }
        let n = doc.len() as f64;
        let g: Embedding = self
            .transpose_mul(&mean(query, self.dim))
            .into_iter()
            .map(|x| x / n)
            .collect();
        vec![g; doc.len()]
    }
}

/// Squashes another scorer through a logistic: `f = sigmoid(inner)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidScorer<S> {
    pub inner: S,
}

impl<S: DifferentiableScorer> DifferentiableScorer for SigmoidScorer<S> {
    fn forward(&self, query: &[Embedding], doc: &[Embedding]) -> f64 {
        sigmoid(self.inner.forward(query, doc))
    }

    fn grad_doc(&self, query: &[Embedding], doc: &[Embedding]) -> Vec<Embedding> {
        let s = sigmoid(self.inner.forward(query, doc));
        let scale = s * (1.0 - s);
        let mut g = self.inner.grad_doc(query, doc);
        g.iter_mut().flatten().for_each(|x| *x *= scale);
        g
    }
}

/// `f = Σ_i w · doc[i]`; the query is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weight: Embedding,
}

impl DifferentiableScorer for LinearScorer {
    fn forward(&self, _query: &[Embedding], doc: &[Embedding]) -> f64 {
        doc.iter().map(|x| dot(&self.weight, x)).sum()
    }

    fn grad_doc(&self, _query: &[Embedding], doc: &[Embedding]) -> Vec<Embedding> {
        vec![self.weight.clone(); doc.len()]
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Static token embeddings keyed by surface.
///
/// Surfaces without an explicit vector get a deterministic Gaussian vector
/// derived from the table seed and the surface bytes, so every surface has an
/// embedding without a closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    explicit: HashMap<String, Embedding>,
}

impl EmbeddingTable {
    pub fn seeded(dim: usize, seed: u64) -> Self {
        EmbeddingTable {
            dim,
            seed,
            explicit: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set(&mut self, surface: &str, vector: Embedding) -> Result<()> {
        if vector.len() != self.dim || vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding for {surface:?} must have {} finite entries",
                self.dim
            )));
        }
        self.explicit.insert(surface.to_string(), vector);
        Ok(())
    }

    pub fn vector(&self, surface: &str) -> Embedding {
        if let Some(v) = self.explicit.get(surface) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(surface.as_bytes()));
        let normal = Normal::new(0.0, INIT_SD).expect("valid sd");
        (0..self.dim).map(|_| normal.sample(&mut rng)).collect()
    }

    pub fn embed<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<Embedding> {
        surfaces.iter().map(|s| self.vector(s.as_ref())).collect()
    }
}

/// Embeddings plus a bilinear relevance head, as stored in a scorer file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub embeddings: EmbeddingTable,
    pub scorer: BilinearScorer,
}

const SCORER_MAGIC: &str = "RELCONSTRAIN-SCORER";

impl ScorerModel {
    pub fn seeded(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("scorer dim must be positive".into()));
        }
        Ok(ScorerModel {
            embeddings: EmbeddingTable::seeded(dim, seed),
            scorer: BilinearScorer::seeded(dim, seed),
        })
    }

    /// Text format:
    ///
    /// ```text
    /// RELCONSTRAIN-SCORER v1
    /// dim=<n>
    /// seed=<u64>
    /// E <surface> <n floats>     (optional, any number)
    /// W <n floats>               (optional, exactly n rows when present)
    /// END
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedScorer(m);
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or_default();
        let version = header
            .strip_prefix(SCORER_MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        if version != "v1" {
            return Err(Error::UnsupportedVersion(version.to_string()));
        }
        let mut next_kv = |key: &str| -> Result<String> {
            lines
                .next()
                .and_then(|(_, l)| l.strip_prefix(key)?.strip_prefix('=').map(str::to_string))
                .ok_or_else(|| bad(format!("expected {key}=")))
        };
        let dim: usize = next_kv("dim")?
            .parse()
            .map_err(|e| bad(format!("dim: {e}")))?;
        let seed: u64 = next_kv("seed")?
            .parse()
            .map_err(|e| bad(format!("seed: {e}")))?;
        let mut model = Self::seeded(dim, seed).map_err(|e| bad(e.to_string()))?;

        let parse_floats = |fields: &[&str], lineno: usize| -> Result<Vec<f64>> {
            if fields.len() != dim {
                return Err(bad(format!("line {lineno}: expected {dim} values")));
            }
            fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| bad(format!("line {lineno}: {e}")))
                })
                .collect()
        };

        let mut rows = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let lineno = i + 1;
            if ended {
                return Err(bad(format!("line {lineno}: content after END")));
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.split_first() {
                Some((&"END", [])) => ended = true,
                Some((&"E", [surface, rest @ ..])) => {
                    let v = parse_floats(rest, lineno)?;
                    model
                        .embeddings
                        .set(surface, v)
                        .map_err(|e| bad(format!("line {lineno}: {e}")))?;
                }
                Some((&"W", rest)) => rows.push(parse_floats(rest, lineno)?),
                None => {}
                _ => return Err(bad(format!("line {lineno}: unrecognized line"))),
            }
        }
        if !ended {
            return Err(bad("truncated (missing END)".into()));
        }
        if !rows.is_empty() {
            model.scorer = BilinearScorer::new(dim, rows).map_err(|e| bad(e.to_string()))?;
        }
        Ok(model)
    }

    /// Writes every explicit embedding and the full matrix.
    pub fn to_text(&self) -> String {
        let dim = self.embeddings.dim;
        let mut out = format!(
            "{SCORER_MAGIC} v1\ndim={dim}\nseed={}\n",
            self.embeddings.seed
        );
        let mut surfaces: Vec<&String> = self.embeddings.explicit.keys().collect();
        surfaces.sort();
        for s in surfaces {
            out.push_str("E ");
            out.push_str(s);
            for x in &self.embeddings.explicit[s] {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        for r in 0..self.scorer.dim {
            out.push('W');
            for x in self.scorer.row(r) {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out.push_str("END\n");
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading scorer {}", path.display()), e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing scorer {}", path.display()), e))
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    Ok(())
}

fn scaled(doc: &[Embedding], alpha: f64) -> Vec<Embedding> {
    doc.iter()
        .map(|x| x.iter().map(|v| v * alpha).collect())
        .collect()
}

/// Integrated Gradients for one document token, zero baseline:
///
/// `x_i · (1/m) Σ_{k=1..m} ∂f(k/m · x)/∂x_i`
///
/// The whole document moves along the straight path; the query stays fixed.
pub fn integrad<S: DifferentiableScorer + ?Sized>(
    scorer: &S,
    query: &[Embedding],
    doc: &[Embedding],
    token_index: usize,
    steps: usize,
) -> Result<f64> {
    check_steps(steps)?;
    let x = doc
        .get(token_index)
        .ok_or_else(|| Error::InvalidArgument(format!("token index {token_index} out of range")))?;
    let mut acc = vec![0.0; x.len()];
    for k in 1..=steps {
        let g = scorer.grad_doc(query, &scaled(doc, k as f64 / steps as f64));
        for (a, v) in acc.iter_mut().zip(&g[token_index]) {
            *a += v;
        }
    }
    Ok(dot(x, &acc) / steps as f64)
}

/// Integrated Gradients for every document token at once. Gradients at the
/// interpolation points are computed under `exec`; the sum is sequential.
pub fn integrated_gradients<S: DifferentiableScorer + ?Sized>(
    scorer: &S,
    query: &[Embedding],
    doc: &[Embedding],
    steps: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    check_steps(steps)?;
    let grads = exec.map_range(1..steps + 1, |k| {
        scorer.grad_doc(query, &scaled(doc, k as f64 / steps as f64))
    });
    let dim = doc.first().map_or(0, Vec::len);
    let mut acc = vec![vec![0.0; dim]; doc.len()];
    for g in &grads {
        for (a, gi) in acc.iter_mut().zip(g) {
            for (x, y) in a.iter_mut().zip(gi) {
                *x += y;
            }
        }
    }
    Ok(doc
        .iter()
        .zip(&acc)
        .map(|(x, a)| dot(x, a) / steps as f64)
        .collect())
}

/// `a_i = g_i / Σ_j |g_j|`; all zeros when every `g_j` is zero.
pub fn normalize_saliency(raw: &[f64]) -> Vec<f64> {
    let denom: f64 = raw.iter().map(|g| g.abs()).sum();
    if denom == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|g| g / denom).collect()
}

/// Per-token attributions aligned with the attributed token surfaces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyVector {
    pub tokens: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl SaliencyVector {
    pub fn from_raw(tokens: Vec<String>, raw: Vec<f64>) -> Result<Self> {
        if tokens.len() != raw.len() {
            return Err(Error::LengthMismatch {
                left: tokens.len(),
                right: raw.len(),
            });
        }
        let normalized = normalize_saliency(&raw);
        Ok(SaliencyVector {
            tokens,
            raw,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `token<TAB>raw<TAB>normalized<TAB>selected` rows, no header.
    pub fn to_tsv(&self, selected: &[String]) -> String {
        let mut out = String::new();
        for ((t, r), a) in self.tokens.iter().zip(&self.raw).zip(&self.normalized) {
            let flag = u8::from(selected.contains(t));
            let _ = writeln!(out, "{t}\t{r}\t{a}\t{flag}");
        }
        out
    }
}

/// Attributes the relevance of `attributed` (given `context` on the query
/// side of the scorer) to each attributed token.
pub fn compute_saliency<S: DifferentiableScorer + ?Sized>(
    scorer: &S,
    embeddings: &EmbeddingTable,
    context: &[String],
    attributed: &[String],
    steps: usize,
    exec: Execution,
) -> Result<SaliencyVector> {
    let q = embeddings.embed(context);
    let d = embeddings.embed(attributed);
    let raw = integrated_gradients(scorer, &q, &d, steps, exec)?;
    SaliencyVector::from_raw(attributed.to_vec(), raw)
}

/// Up to `k` distinct content surfaces with the highest raw saliency.
///
/// Repeated surfaces keep their best-scoring occurrence; ties go to the
/// earlier document position.
pub fn select_constraint_tokens(
    saliency: &SaliencyVector,
    stops: &StopList,
    k: usize,
) -> Vec<String> {
    let mut best: Vec<(usize, &str, f64)> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (pos, (tok, &score)) in saliency.tokens.iter().zip(&saliency.raw).enumerate() {
        if !is_content_token(tok, stops) {
            continue;
        }
        match seen.get(tok.as_str()) {
            Some(&slot) => {
                if score > best[slot].2 {
                    best[slot] = (pos, tok, score);
                }
            }
            None => {
                seen.insert(tok, best.len());
                best.push((pos, tok, score));
            }
        }
    }
    best.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    best.into_iter()
        .take(k)
        .map(|(_, t, _)| t.to_string())
        .collect()
}
