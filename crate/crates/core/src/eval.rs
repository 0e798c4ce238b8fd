//! ROUGE-1/2/L and the two-sided paired t-test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return Prf::default();
        }
        let precision = overlap as f64 / cand_total as f64;
        let recall = overlap as f64 / ref_total as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScores {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

impl RougeScores {
    pub fn compute<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Self {
        RougeScores {
            r1: rouge_n(candidate, reference, 1),
            r2: rouge_n(candidate, reference, 2),
            rl: rouge_l(candidate, reference),
        }
    }

    /// Component-wise mean; zeros for an empty slice.
    pub fn mean(scores: &[RougeScores]) -> Self {
        if scores.is_empty() {
            return RougeScores::default();
        }
        let n = scores.len() as f64;
        let avg = |f: fn(&RougeScores) -> Prf| {
            let (p, r, f1) = scores.iter().map(f).fold((0.0, 0.0, 0.0), |acc, x| {
                (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f1)
            });
            Prf {
                precision: p / n,
                recall: r / n,
                f1: f1 / n,
            }
        };
        RougeScores {
            r1: avg(|s| s.r1),
            r2: avg(|s| s.r2),
            rl: avg(|s| s.rl),
        }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Prf {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence ROUGE.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Prf {
    Prf::from_counts(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    /// `±inf` when the differences are constant and non-zero.
    #[serde(with = "nonfinite")]
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
}

/// JSON has no infinities; write them as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            x.serialize(s)
        } else {
            x.to_string().serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Num {
            F(f64),
            S(String),
        }
        match Num::deserialize(d)? {
            Num::F(x) => Ok(x),
            Num::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Two-sided paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTestResult {
                t_stat: 0.0,
                p_value: 1.0,
                df,
            }
        } else {
            PairedTestResult {
                t_stat: f64::INFINITY.copysign(mean),
                p_value: 0.0,
                df,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    let nu = df as f64;
    // P(|T| > |t|) = I_{ν/(ν+t²)}(ν/2, 1/2)
    let p = statrs::function::beta::beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0);
    Ok(PairedTestResult {
        t_stat: t,
        p_value: p,
        df,
    })
}
