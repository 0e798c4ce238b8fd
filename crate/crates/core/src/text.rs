//! Word-level tokenization, vocabularies and stopword filtering.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a surface in a [`Vocabulary`].
pub type TokenId = u32;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// Separator between the query and the summary in LM training sequences.
pub const SEP: &str = "<sep>";

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())
}

/// Lowercases, splits on whitespace and splits every punctuation character
/// into its own token. Hyphens and apostrophes directly between two
/// alphanumeric characters stay inside the word (`health-care`, `don't`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.to_lowercase().chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if !is_punct(c) {
                word.push(c);
                continue;
            }
            let joiner = (c == '-' || c == '\'')
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if joiner {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Dense token space. Ids 0, 1 and 2 are always BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const BOS_ID: TokenId = 0;
    pub const EOS_ID: TokenId = 1;
    pub const UNK_ID: TokenId = 2;

    /// A vocabulary holding only the special tokens.
    pub fn specials_only() -> Self {
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            index: HashMap::new(),
        };
        for s in [BOS, EOS, UNK] {
            vocab.insert(s);
        }
        vocab
    }

    /// Builds a vocabulary over every distinct surface, in first-seen order.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut vocab = Self::specials_only();
        for sentence in corpus {
            for s in sentence {
                vocab.insert(s.as_ref());
            }
        }
        Ok(vocab)
    }

    /// Rebuilds a vocabulary from an ordered surface list, validating the
    /// special-token layout and uniqueness.
    pub fn from_surfaces(surfaces: Vec<String>) -> Result<Self> {
        if surfaces.len() < 3 || surfaces[0] != BOS || surfaces[1] != EOS || surfaces[2] != UNK {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid surface {s:?}")));
            }
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate surface {s:?}")));
            }
        }
        Ok(Vocabulary { surfaces, index })
    }

    /// Adds a surface if missing and returns its id.
    pub fn insert(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = self.surfaces.len() as TokenId;
        self.surfaces.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Unknown surfaces map to UNK.
    pub fn encode<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<TokenId> {
        surfaces
            .iter()
            .map(|s| self.id(s.as_ref()).unwrap_or(Self::UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.surface(id)
                    .map(str::to_string)
                    .ok_or(Error::TokenOutOfVocabulary(id))
            })
            .collect()
    }
}

/// Stopwords plus single-character punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopList {
    stopwords: HashSet<String>,
    punctuation: BTreeSet<char>,
}

impl Default for StopList {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl StopList {
    pub fn new<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopList {
            stopwords: stopwords
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
            punctuation: (0u8..=127)
                .map(char::from)
                .filter(char::is_ascii_punctuation)
                .collect(),
        }
    }

    /// One surface per line; blank lines and `#` comments are skipped.
    pub fn parse(content: &str) -> Self {
        Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading stopwords {}", path.display()), e))?;
        Ok(Self::parse(&content))
    }

    pub fn is_stopword(&self, surface: &str) -> bool {
        self.stopwords.contains(surface)
    }

    /// True when every character is punctuation (or the surface is empty).
    pub fn is_punctuation(&self, surface: &str) -> bool {
        surface
            .chars()
            .all(|c| self.punctuation.contains(&c) || is_punct(c))
    }

    pub fn len(&self) -> usize {
        self.stopwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stopwords.is_empty()
    }
}

/// False iff the surface is a stopword or made only of punctuation.
pub fn is_content_token(surface: &str, stops: &StopList) -> bool {
    !(stops.is_stopword(surface) || stops.is_punctuation(surface))
}
