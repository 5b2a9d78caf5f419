//! Prompt-pair corpora: one JSON object per line with `source`, `target` and
//! an optional `word_type` of `adjective` or `verb`. Blank lines and lines
//! starting with `#` are skipped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordType {
    Adjective,
    Verb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_type: Option<WordType>,
}

impl PromptPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            word_type: None,
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<PromptPair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pair: PromptPair =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
        if pair.source.trim().is_empty() || pair.target.trim().is_empty() {
            return Err(Error::Input(format!("line {}: empty prompt", i + 1)));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PromptPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
        },
        _ => e.into(),
    })?;
    parse_pairs(&text)
}
