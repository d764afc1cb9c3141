//! Word- and character-level vocabularies with reserved special tokens.
//!
//! On disk a vocabulary is plain text, one token per line, where line `n`
//! (zero-based) holds the token with id `n + 4`. The four reserved ids are
//! implicit and never written.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PAD: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED_NAMES: [&str; NUM_RESERVED] = ["[BOS]", "[EOS]", "[PAD]", "[UNK]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Whitespace-delimited words.
    #[default]
    Word,
    /// One token per character; any whitespace run becomes a single space token.
    Char,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_tokens(mode: TokenizerMode, learned: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::with_capacity(learned.len());
        for tok in learned {
            let id = tokens.len() as TokenId;
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {tok:?}")));
            }
            tokens.push(tok);
        }
        Ok(Vocabulary { mode, tokens, index })
    }

    /// Builds a vocabulary ordered by descending frequency, ties broken
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], mode: TokenizerMode) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in split(text.as_ref(), mode) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
        Self::from_tokens(mode, ranked.into_iter().map(|(t, _)| t).collect())
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    /// Total ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokenizes `text` without adding BOS/EOS. Unknown tokens map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split(text, self.mode)
            .map(|t| self.index.get(&t).copied().unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens back into text, dropping BOS, EOS and PAD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or_else(|| {
                Error::Input(format!("token id {id} outside vocabulary of {}", self.len()))
            })?;
            if !matches!(id, BOS | EOS | PAD) {
                parts.push(tok);
            }
        }
        Ok(match self.mode {
            TokenizerMode::Word => parts.join(" "),
            TokenizerMode::Char => parts.concat().trim().to_string(),
        })
    }

    /// The canonical form `decode(encode(s))` produces for in-vocabulary text.
    pub fn normalize(&self, text: &str) -> String {
        normalize(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens[NUM_RESERVED..] {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    /// Parses the line-oriented format written by [`Vocabulary::to_text`].
    pub fn parse(text: &str, mode: TokenizerMode) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut learned = Vec::new();
        if !text.is_empty() {
            for (n, line) in body.split('\n').enumerate() {
                let bad = |why: &str| Error::format("vocabulary", format!("line {}: {why}", n + 1));
                if line.is_empty() {
                    return Err(bad("empty token"));
                }
                match mode {
                    TokenizerMode::Word => {
                        if line.chars().any(char::is_whitespace) {
                            return Err(bad("word token contains whitespace"));
                        }
                    }
                    TokenizerMode::Char => {
                        if line.chars().count() != 1 {
                            return Err(bad("character token must be one character"));
                        }
                    }
                }
                if RESERVED_NAMES.contains(&line) {
                    return Err(bad("reserved token name"));
                }
                learned.push(line.to_string());
            }
        }
        Self::from_tokens(mode, learned)
    }
}

fn split(text: &str, mode: TokenizerMode) -> Box<dyn Iterator<Item = String> + '_> {
    match mode {
        TokenizerMode::Word => Box::new(text.split_whitespace().map(str::to_lowercase)),
        TokenizerMode::Char => {
            let canonical = normalize(text);
            Box::new(
                canonical
                    .chars()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .into_iter(),
            )
        }
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    words.join(" ")
}
