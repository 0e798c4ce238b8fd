//! Positive lexical constraints in conjunctive normal form.
//!
//! A [`Cnf`] is a conjunction of [`Clause`]s, each a disjunction of
//! [`Literal`]s (token sequences). [`CompiledCnf`] binds a CNF to token ids and
//! [`ConstraintTracker`] follows one generation path: clause satisfaction is
//! irreversible, and each literal carries how many of its leading tokens are
//! currently matched by the end of the generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, TokenId, Vocabulary};

/// Clause indices are stored in a `u64` bitmask.
pub const MAX_CLAUSES: usize = 64;

/// Id used for literal tokens that are not in the vocabulary; never generated.
const UNREACHABLE: TokenId = TokenId::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub tokens: Vec<String>,
    pub source_lemma: String,
}

impl Literal {
    pub fn new(tokens: Vec<String>, source_lemma: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("literal must have tokens".into()));
        }
        if tokens
            .iter()
            .any(|t| t.is_empty() || *t != t.to_lowercase())
        {
            return Err(Error::InvalidArgument(format!(
                "literal tokens must be non-empty lowercase: {tokens:?}"
            )));
        }
        Ok(Literal {
            tokens,
            source_lemma: source_lemma.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    /// Drops duplicate token sequences, keeping first occurrences in order.
    pub fn new(literals: Vec<Literal>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let literals: Vec<Literal> = literals
            .into_iter()
            .filter(|l| seen.insert(l.tokens.clone()))
            .collect();
        if literals.is_empty() {
            return Err(Error::InvalidArgument("clause must have literals".into()));
        }
        Ok(Clause { literals })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cnf {
    clauses: Vec<Clause>,
}

impl Cnf {
    pub fn new(clauses: Vec<Clause>) -> Result<Self> {
        if clauses.len() > MAX_CLAUSES {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_CLAUSES} clauses supported, got {}",
                clauses.len()
            )));
        }
        Ok(Cnf { clauses })
    }

    pub fn empty() -> Self {
        Cnf::default()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Clause literals as space-joined strings.
    pub fn to_nested(&self) -> Vec<Vec<String>> {
        self.clauses
            .iter()
            .map(|c| c.literals.iter().map(Literal::text).collect())
            .collect()
    }

    /// One clause per line, literals separated by `|`.
    pub fn to_debug_string(&self) -> String {
        let mut out = String::new();
        for clause in self.to_nested() {
            let _ = writeln!(out, "{}", clause.join("|"));
        }
        out
    }

    /// Inverse of [`Cnf::to_debug_string`]. Literal tokens are split on
    /// whitespace; the first literal of a clause names its lemma.
    pub fn parse_debug(text: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<Vec<String>> = line
                .split('|')
                .map(|lit| lit.split_whitespace().map(str::to_string).collect())
                .collect();
            let lemma = parts[0].join(" ");
            let literals = parts
                .into_iter()
                .map(|tokens| Literal::new(tokens, lemma.clone()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Line {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            clauses.push(Clause::new(literals)?);
        }
        Cnf::new(clauses)
    }

    /// Whether every clause has a literal occurring contiguously in
    /// `sequence`. A direct scan, independent of [`ConstraintTracker`].
    pub fn satisfied_by<S: AsRef<str>>(&self, sequence: &[S]) -> bool {
        let seq: Vec<&str> = sequence.iter().map(AsRef::as_ref).collect();
        self.clauses.iter().all(|clause| {
            clause.literals.iter().any(|lit| {
                seq.windows(lit.len())
                    .any(|w| w.iter().zip(&lit.tokens).all(|(a, b)| *a == b))
            })
        })
    }
}

/// Lemma → surface forms, from `lemma<TAB>form1,form2,…` lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MorphologyTable {
    forms: BTreeMap<String, BTreeSet<String>>,
}

const DEFAULT_MORPHOLOGY: &str = include_str!("../data/morphology.tsv");

impl MorphologyTable {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_MORPHOLOGY).expect("bundled morphology table parses")
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut table = MorphologyTable::default();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (lemma, forms) = line.split_once('\t').ok_or_else(|| Error::Line {
                line: i + 1,
                message: "expected lemma<TAB>forms".into(),
            })?;
            let forms = forms
                .split(',')
                .map(|f| f.trim().to_lowercase())
                .filter(|f| !f.is_empty());
            table.insert(lemma.trim(), forms);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading morphology {}", path.display()), e))?;
        Self::parse(&content).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn insert<I: IntoIterator<Item = String>>(&mut self, lemma: &str, forms: I) {
        let lemma = lemma.to_lowercase();
        let entry = self.forms.entry(lemma.clone()).or_default();
        entry.insert(lemma);
        entry.extend(forms);
    }

    pub fn get(&self, lemma: &str) -> Option<&BTreeSet<String>> {
        self.forms.get(lemma)
    }

    /// Forms of `surface` when it is a table lemma, or else the union of every
    /// entry listing it as a form.
    pub fn family(&self, surface: &str) -> Option<BTreeSet<String>> {
        if let Some(forms) = self.forms.get(surface) {
            return Some(forms.clone());
        }
        let union: BTreeSet<String> = self
            .forms
            .values()
            .filter(|forms| forms.contains(surface))
            .flatten()
            .cloned()
            .collect();
        (!union.is_empty()).then_some(union)
    }
}

fn inflect(lemma: &str) -> Vec<String> {
    if lemma.len() < 2 || !lemma.chars().all(|c| c.is_ascii_lowercase()) {
        return Vec::new();
    }
    let plural = if ["s", "x", "z", "ch", "sh"]
        .iter()
        .any(|e| lemma.ends_with(e))
    {
        format!("{lemma}es")
    } else {
        format!("{lemma}s")
    };
    let (past, progressive) = match lemma.strip_suffix('e') {
        Some(stem) if !stem.ends_with('e') => (format!("{lemma}d"), format!("{stem}ing")),
        _ => (format!("{lemma}ed"), format!("{lemma}ing")),
    };
    vec![plural, past, progressive]
}

/// The lemma first, then its other forms sorted. Forms come from the table,
/// either as a lemma entry or as a listed form of one; anything else falls
/// back to regular inflection rules.
pub fn expand_word_forms(lemma: &str, morph: &MorphologyTable) -> Vec<String> {
    let others: BTreeSet<String> = match morph.family(lemma) {
        Some(forms) => forms,
        None => inflect(lemma).into_iter().collect(),
    };
    std::iter::once(lemma.to_string())
        .chain(others.into_iter().filter(|f| f != lemma))
        .collect()
}

/// One clause per token, holding a literal for each of its word forms.
/// Multi-word forms become multi-token literals.
pub fn build_cnf<S: AsRef<str>>(tokens: &[S], morph: &MorphologyTable) -> Result<Cnf> {
    let clauses = tokens
        .iter()
        .map(|t| {
            let lemma = t.as_ref();
            let literals = expand_word_forms(lemma, morph)
                .into_iter()
                .map(|form| tokenize(&form))
                .filter(|toks| !toks.is_empty())
                .map(|toks| Literal::new(toks, lemma))
                .collect::<Result<Vec<_>>>()?;
            Clause::new(literals)
        })
        .collect::<Result<Vec<_>>>()?;
    Cnf::new(clauses)
}

/// Set of satisfied clause indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
pub struct ClauseSet(u64);

impl ClauseSet {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn contains(self, clause: usize) -> bool {
        self.0 >> clause & 1 == 1
    }

    fn insert(&mut self, clause: usize) {
        self.0 |= 1 << clause;
    }

    pub fn is_superset_of(self, other: ClauseSet) -> bool {
        self.0 & other.0 == other.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CompiledLiteral {
    ids: Vec<TokenId>,
    /// KMP failure function over `ids`.
    failure: Vec<usize>,
    clause: usize,
}

impl CompiledLiteral {
    fn new(ids: Vec<TokenId>, clause: usize) -> Self {
        let mut failure = vec![0; ids.len()];
        let mut k = 0;
        for i in 1..ids.len() {
            while k > 0 && ids[i] != ids[k] {
                k = failure[k - 1];
            }
            if ids[i] == ids[k] {
                k += 1;
            }
            failure[i] = k;
        }
        CompiledLiteral {
            ids,
            failure,
            clause,
        }
    }

    /// Longest literal prefix that is a suffix of (generation + next), given
    /// the same quantity before `next`.
    fn step(&self, matched: usize, next: TokenId) -> usize {
        let mut k = matched;
        if k == self.ids.len() {
            k = self.failure[k - 1];
        }
        while k > 0 && self.ids[k] != next {
            k = self.failure[k - 1];
        }
        if self.ids[k] == next {
            k + 1
        } else {
            0
        }
    }
}

/// A CNF over token ids, ready for tracking.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompiledCnf {
    literals: Vec<CompiledLiteral>,
    n_clauses: usize,
}

impl CompiledCnf {
    /// Literal tokens missing from `vocab` make that literal unsatisfiable.
    pub fn new(cnf: &Cnf, vocab: &Vocabulary) -> Self {
        let ids = cnf
            .clauses
            .iter()
            .map(|c| {
                c.literals
                    .iter()
                    .map(|l| {
                        l.tokens
                            .iter()
                            .map(|t| vocab.id(t).unwrap_or(UNREACHABLE))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self::from_ids(ids).expect("Cnf already validated")
    }

    /// Clauses given directly as id sequences: `clauses[c][l]` is a literal.
    pub fn from_ids(clauses: Vec<Vec<Vec<TokenId>>>) -> Result<Self> {
        if clauses.len() > MAX_CLAUSES {
            return Err(Error::InvalidArgument("too many clauses".into()));
        }
        let mut literals = Vec::new();
        for (c, clause) in clauses.into_iter().enumerate() {
            if clause.is_empty() || clause.iter().any(Vec::is_empty) {
                return Err(Error::InvalidArgument("empty clause or literal".into()));
            }
            literals.extend(clause.into_iter().map(|ids| CompiledLiteral::new(ids, c)));
        }
        let n_clauses = literals.last().map_or(0, |l| l.clause + 1);
        Ok(CompiledCnf {
            literals,
            n_clauses,
        })
    }

    pub fn num_clauses(&self) -> usize {
        self.n_clauses
    }

    pub fn is_empty(&self) -> bool {
        self.n_clauses == 0
    }

    pub fn num_literals(&self) -> usize {
        self.literals.len()
    }

    pub fn literal_len(&self, literal: usize) -> usize {
        self.literals[literal].ids.len()
    }

    pub fn literal_clause(&self, literal: usize) -> usize {
        self.literals[literal].clause
    }

    pub fn literal_ids(&self, literal: usize) -> &[TokenId] {
        &self.literals[literal].ids
    }

    pub fn all_clauses(&self) -> ClauseSet {
        ClauseSet(if self.n_clauses == 64 {
            u64::MAX
        } else {
            (1u64 << self.n_clauses) - 1
        })
    }
}

/// Satisfaction state of one generation path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintTracker {
    satisfied: ClauseSet,
    /// Matched prefix length per literal, in [`CompiledCnf`] literal order.
    progress: Vec<u32>,
}

impl ConstraintTracker {
    pub fn new(cnf: &CompiledCnf) -> Self {
        ConstraintTracker {
            satisfied: ClauseSet::default(),
            progress: vec![0; cnf.literals.len()],
        }
    }

    pub fn satisfied(&self) -> ClauseSet {
        self.satisfied
    }

    pub fn progress(&self, literal: usize) -> usize {
        self.progress[literal] as usize
    }

    pub fn all_satisfied(&self, cnf: &CompiledCnf) -> bool {
        self.satisfied == cnf.all_clauses()
    }

    pub fn advance_in_place(&mut self, cnf: &CompiledCnf, next: TokenId) {
        for (lit, p) in cnf.literals.iter().zip(self.progress.iter_mut()) {
            let matched = lit.step(*p as usize, next);
            *p = matched as u32;
            if matched == lit.ids.len() {
                self.satisfied.insert(lit.clause);
            }
        }
    }

    /// State after appending `next` to the generation.
    pub fn advance(&self, cnf: &CompiledCnf, next: TokenId) -> Self {
        let mut t = self.clone();
        t.advance_in_place(cnf, next);
        t
    }

    /// Best `matched / |literal|` over literals of unsatisfied clauses;
    /// zero when nothing is left unsatisfied.
    pub fn max_partial_ratio(&self, cnf: &CompiledCnf) -> f64 {
        cnf.literals
            .iter()
            .zip(&self.progress)
            .filter(|(lit, _)| !self.satisfied.contains(lit.clause))
            .map(|(lit, &p)| p as f64 / lit.ids.len() as f64)
            .fold(0.0, f64::max)
    }

    /// Tracker state from scratch by re-scanning the whole sequence, without
    /// incremental matching.
    pub fn rescan(cnf: &CompiledCnf, sequence: &[TokenId]) -> Self {
        let mut satisfied = ClauseSet::default();
        let mut progress = Vec::with_capacity(cnf.literals.len());
        for lit in &cnf.literals {
            let ids = &lit.ids;
            if sequence.windows(ids.len()).any(|w| w == ids.as_slice()) {
                satisfied.insert(lit.clause);
            }
            let longest = (0..=ids.len().min(sequence.len()))
                .rev()
                .find(|&p| sequence[sequence.len() - p..] == ids[..p])
                .unwrap_or(0);
            progress.push(longest as u32);
        }
        ConstraintTracker {
            satisfied,
            progress,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn table_forms_include_derivations() {
        let morph = MorphologyTable::builtin();
        let forms = expand_word_forms("private", &morph);
        assert_eq!(forms[0], "private");
        assert!(forms.contains(&"privatization".to_string()));
        let health = expand_word_forms("health", &morph);
        assert!(health.contains(&"healthy".to_string()));
    }

    #[test]
    fn rule_fallback() {
        let empty = MorphologyTable::default();
        let forms = expand_word_forms("standard", &empty);
        assert_eq!(
            forms,
            s(&["standard", "standarded", "standarding", "standards"])
        );
        assert_eq!(
            expand_word_forms("violate", &empty),
            s(&["violate", "violated", "violates", "violating"])
        );
        assert!(expand_word_forms("tax", &empty).contains(&"taxes".to_string()));
        assert!(expand_word_forms("free", &empty).contains(&"freeing".to_string()));
        assert_eq!(expand_word_forms("x1", &empty), s(&["x1"]));
    }

    #[test]
    fn listed_form_expands_to_its_family() {
        let morph = MorphologyTable::builtin();
        let forms = expand_word_forms("standards", &morph);
        assert_eq!(forms[0], "standards");
        assert!(forms.contains(&"standard".to_string()));
        assert!(!forms.iter().any(|f| f == "standardses"));
        let privat = expand_word_forms("privatization", &morph);
        assert!(privat.contains(&"private".to_string()));
    }

    #[test]
    fn morphology_lemma_always_present() {
        let t = MorphologyTable::parse("# c\nrun\tran,running\n").unwrap();
        assert!(t.get("run").unwrap().contains("run"));
        assert!(MorphologyTable::parse("no tab here\n").is_err());
    }

    #[test]
    fn cnf_construction() {
        let morph = MorphologyTable::builtin();
        let cnf = build_cnf(&["private", "health", "standard"], &morph).unwrap();
        assert_eq!(cnf.len(), 3);
        let nested = cnf.to_nested();
        assert!(nested[0].contains(&"privatization".to_string()));
        assert!(nested[1].contains(&"healthy".to_string()));
        assert!(nested[2].contains(&"standards".to_string()));
        assert!(cnf.to_debug_string().starts_with("private|"));

        assert!(build_cnf::<&str>(&[], &morph).unwrap().is_empty());

        let multi = build_cnf(&["apple tree"], &MorphologyTable::default()).unwrap();
        assert_eq!(multi.len(), 1);
        assert_eq!(multi.clauses()[0].literals().len(), 1);
        assert_eq!(
            multi.clauses()[0].literals()[0].tokens,
            s(&["apple", "tree"])
        );
    }

    #[test]
    fn debug_format_round_trip() {
        let cnf = build_cnf(&["private", "apple tree"], &MorphologyTable::builtin()).unwrap();
        let back = Cnf::parse_debug(&cnf.to_debug_string()).unwrap();
        assert_eq!(back.to_nested(), cnf.to_nested());
        assert!(Cnf::parse_debug("").unwrap().is_empty());
        assert!(Cnf::parse_debug("a||b\n").is_err());
    }

    #[test]
    fn satisfied_by_scans_contiguously() {
        let cnf = build_cnf(&["apple tree"], &MorphologyTable::default()).unwrap();
        assert!(cnf.satisfied_by(&["an", "apple", "tree"]));
        assert!(!cnf.satisfied_by(&["apple", "oak", "tree"]));
        assert!(Cnf::empty().satisfied_by::<&str>(&[]));
    }

    // apple=10, tree=11, oak=12
    fn apple_tree() -> CompiledCnf {
        CompiledCnf::from_ids(vec![vec![vec![10, 11]]]).unwrap()
    }

    #[test]
    fn partial_match_half() {
        let cnf = apple_tree();
        let t = ConstraintTracker::new(&cnf)
            .advance(&cnf, 5)
            .advance(&cnf, 10);
        assert_eq!(t.progress(0), 1);
        assert_eq!(t.max_partial_ratio(&cnf), 0.5);

        let done = t.advance(&cnf, 11);
        assert!(done.satisfied().contains(0));
        assert_eq!(done.max_partial_ratio(&cnf), 0.0);
        let later = done.advance(&cnf, 12).advance(&cnf, 3);
        assert!(later.satisfied().contains(0));

        let reset = t.advance(&cnf, 12);
        assert_eq!(reset.progress(0), 0);
        assert!(!reset.satisfied().contains(0));
    }

    #[test]
    fn max_ratio_over_unsatisfied() {
        let cnf = CompiledCnf::from_ids(vec![vec![vec![10, 11]], vec![vec![20, 21, 22]]]).unwrap();
        let t = ConstraintTracker::new(&cnf).advance(&cnf, 10);
        assert_eq!(t.max_partial_ratio(&cnf), 0.5);
        let t = ConstraintTracker::rescan(&cnf, &[10, 11, 20, 21, 22]);
        assert!(t.all_satisfied(&cnf));
        assert_eq!(t.max_partial_ratio(&cnf), 0.0);
        assert_eq!(
            ConstraintTracker::new(&CompiledCnf::default())
                .max_partial_ratio(&CompiledCnf::default()),
            0.0
        );
    }

    #[test]
    fn self_overlapping_literal() {
        // "a a b": after "a a a" the match stays at 2
        let cnf = CompiledCnf::from_ids(vec![vec![vec![1, 1, 2]]]).unwrap();
        let mut t = ConstraintTracker::new(&cnf);
        for x in [1, 1, 1] {
            t.advance_in_place(&cnf, x);
        }
        assert_eq!(t.progress(0), 2);
        t.advance_in_place(&cnf, 2);
        assert!(t.all_satisfied(&cnf));
    }

    #[test]
    fn oov_literal_never_matches() {
        let vocab = Vocabulary::build(&[s(&["apple"])]).unwrap();
        let cnf = build_cnf(&["pear"], &MorphologyTable::default()).unwrap();
        let compiled = CompiledCnf::new(&cnf, &vocab);
        let mut t = ConstraintTracker::new(&compiled);
        for id in 0..vocab.len() as u32 {
            t.advance_in_place(&compiled, id);
        }
        assert!(!t.all_satisfied(&compiled));
    }

    fn arb_cnf() -> impl Strategy<Value = Vec<Vec<Vec<TokenId>>>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec(0u32..4, 1..4), 1..3),
            0..4,
        )
    }

    proptest! {
        #[test]
        fn tracker_matches_rescan(clauses in arb_cnf(), seq in proptest::collection::vec(0u32..4, 0..20)) {
            let cnf = CompiledCnf::from_ids(clauses).unwrap();
            let mut t = ConstraintTracker::new(&cnf);
            for i in 0..seq.len() {
                let before = t.satisfied();
                t.advance_in_place(&cnf, seq[i]);
                prop_assert!(t.satisfied().is_superset_of(before));
                prop_assert_eq!(&t, &ConstraintTracker::rescan(&cnf, &seq[..=i]));
                let r = t.max_partial_ratio(&cnf);
                prop_assert!((0.0..1.0).contains(&r));
            }
        }
    }
}
