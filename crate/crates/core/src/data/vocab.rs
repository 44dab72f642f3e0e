use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}

/// Splits raw text into word tokens. Subword schemes can slot in here.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercased whitespace splitting.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Specials first, then tokens by descending frequency with ties broken by
    /// first occurrence, truncated to `max_size` entries in total.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size < NUM_SPECIAL + 1 {
            return Err(Error::Data(format!(
                "vocabulary size {max_size} must hold {NUM_SPECIAL} specials and at least one token"
            )));
        }
        let tokenizer = WhitespaceTokenizer;
        // token -> (count, first occurrence)
        let mut stats: HashMap<String, (usize, usize)> = HashMap::new();
        let mut seen = 0;
        for line in lines {
            for tok in tokenizer.tokenize(line) {
                if SPECIAL_TOKENS.contains(&tok.to_uppercase().as_str()) {
                    continue;
                }
                let entry = stats.entry(tok).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
        if stats.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, (usize, usize))> = stats.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.truncate(max_size - NUM_SPECIAL);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let id_to_token: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens)
            .collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        WhitespaceTokenizer
            .tokenize(text)
            .iter()
            .map(|t| self.id(t))
            .collect()
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() <= NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(Error::Data(format!(
                "{}: not a vocabulary file (specials missing)",
                path.display()
            )));
        }
        Ok(Self::from_tokens(
            tokens[NUM_SPECIAL..].iter().map(|s| s.to_string()),
        ))
    }
}
