use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved vocabulary, in id order.
pub const SPECIAL_TOKENS: [&str; 9] = [
    "[PAD]",
    "[CLS]",
    "[DEC]",
    "[SEP]",
    "[BOS]",
    "[EOS]",
    "[UNK]",
    "<Protein>",
    "</Protein>",
];

/// Lowercases and splits on whitespace; every character that is neither
/// alphanumeric nor whitespace becomes a token of its own.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Normalised form of `text`: its tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

/// Word-level tokenizer. Ids below [`SPECIAL_TOKENS`]`.len()` are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    tokens: Vec<String>,
}

impl Tokenizer {
    pub const PAD: usize = 0;
    pub const CLS: usize = 1;
    pub const DEC: usize = 2;
    pub const SEP: usize = 3;
    pub const BOS: usize = 4;
    pub const EOS: usize = 5;
    pub const UNK: usize = 6;
    pub const PROTEIN_OPEN: usize = 7;
    pub const PROTEIN_CLOSE: usize = 8;

    /// Builds a vocabulary of at most `max_vocab` entries (reserved tokens
    /// included). Words are ranked by frequency, ties broken
    /// lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_vocab: usize) -> Result<Self> {
        if max_vocab < SPECIAL_TOKENS.len() {
            return Err(Error::Tokenizer(format!(
                "max_vocab {max_vocab} cannot hold the {} reserved tokens",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for t in texts {
            any = true;
            for tok in normalize_tokens(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::Tokenizer("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t).take(max_vocab - SPECIAL_TOKENS.len()));
        Self::from_tokens(tokens)
    }

    /// Tokenizer over an explicit id-ordered token list; the list must
    /// start with the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Tokenizer(format!("reserved token {s} missing at id {i}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Tokenizer(format!("duplicate token {t:?}")));
            }
        }
        Ok(Tokenizer { tokens, index })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a reserved token by its surface form.
    pub fn special_id(&self, token: &str) -> Result<usize> {
        match SPECIAL_TOKENS.iter().position(|s| *s == token) {
            Some(i) if self.token(i) == Some(token) => Ok(i),
            _ => Err(Error::Tokenizer(format!("{token:?} is not a reserved token"))),
        }
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        normalize_tokens(text)
            .iter()
            .map(|t| match self.index.get(t) {
                Some(&i) if !Self::is_special(i) => i,
                _ => Self::UNK,
            })
            .collect()
    }

    /// [`Tokenizer::encode`] followed by [EOS].
    pub fn encode_with_eos(&self, text: &str) -> Vec<usize> {
        let mut v = self.encode(text);
        v.push(Self::EOS);
        v
    }

    /// Joins token strings with single spaces; reserved tokens are written
    /// in their bracketed form.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Like [`Tokenizer::decode`] but drops reserved tokens.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&i| !Self::is_special(i))
            .map(|&i| self.token(i).unwrap_or("[UNK]"))
            .collect();
        words.join(" ")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TokenizerFile {
            version: 1,
            tokens: self.tokens.clone(),
        })
        .expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TokenizerFile = serde_json::from_str(text)?;
        if f.version != 1 {
            return Err(Error::Tokenizer(format!("unsupported tokenizer version {}", f.version)));
        }
        Self::from_tokens(f.tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
