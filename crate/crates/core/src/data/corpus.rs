use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// A document as read from disk: one string per segment (line).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextDocument {
    pub segments: Vec<String>,
}

/// A tokenized document. Segments never contain special ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub segments: Vec<Vec<usize>>,
}

impl TextDocument {
    pub fn encode(&self, vocab: &Vocabulary) -> Document {
        Document {
            segments: self
                .segments
                .iter()
                .map(|s| vocab.encode(s))
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }
}

/// Blank lines separate documents; every other line is one segment.
/// Runs of blank lines count as a single boundary.
pub fn parse_documents(text: &str) -> Vec<TextDocument> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                docs.push(TextDocument {
                    segments: std::mem::take(&mut current),
                });
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        docs.push(TextDocument { segments: current });
    }
    docs
}

pub fn read_documents(path: &Path) -> Result<Vec<TextDocument>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let docs = parse_documents(&text);
    if docs.is_empty() {
        log::warn!("{}: corpus contains no documents", path.display());
    }
    Ok(docs)
}

pub fn encode_documents(docs: &[TextDocument], vocab: &Vocabulary) -> Vec<Document> {
    docs.iter()
        .map(|d| d.encode(vocab))
        .filter(|d| !d.segments.is_empty())
        .collect()
}

/// Every segment line of a corpus, for vocabulary building.
pub fn segment_lines(docs: &[TextDocument]) -> impl Iterator<Item = &str> {
    docs.iter()
        .flat_map(|d| d.segments.iter().map(String::as_str))
}
