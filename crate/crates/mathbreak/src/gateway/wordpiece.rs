//! Greedy longest-match WordPiece tokenization over a plain vocab file (one
//! token per line, continuations prefixed `##`). Used to count response
//! tokens when a transport does not report usage.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct WordPieceVocab {
    vocab: HashSet<String>,
}

impl WordPieceVocab {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Tokenizer {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let vocab: HashSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if vocab.is_empty() {
            return Err(Error::Tokenizer {
                path: path.display().to_string(),
                reason: "empty vocabulary".into(),
            });
        }
        Ok(Self { vocab })
    }

    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        Self {
            vocab: tokens.into_iter().collect(),
        }
    }

    /// Deterministic token count; 0 for empty (or all-whitespace) text.
    /// Words are case-folded (uncased convention), punctuation splits into
    /// its own tokens, and an untokenizable word counts as one unknown.
    pub fn count_tokens(&self, text: &str) -> u64 {
        let mut count = 0u64;
        for word in basic_tokens(text) {
            count += self.word_pieces(&word);
        }
        count
    }

    fn word_pieces(&self, word: &str) -> u64 {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = 0u64;
        let mut start = 0usize;
        while start < chars.len() {
            let mut end = chars.len();
            let mut matched = None;
            while end > start {
                let piece: String = chars[start..end].iter().collect();
                let lookup = if start == 0 { piece } else { format!("##{piece}") };
                if self.vocab.contains(&lookup) {
                    matched = Some(end);
                    break;
                }
                end -= 1;
            }
            match matched {
                Some(e) => {
                    pieces += 1;
                    start = e;
                }
                None => return 1, // whole word becomes a single unknown token
            }
        }
        pieces.max(1)
    }
}

/// Deterministic token count of `text` under the vocab asset at `tokenizer`;
/// 0 for empty text, error when the asset is missing.
pub fn count_tokens(text: &str, tokenizer: &Path) -> Result<u64> {
    Ok(WordPieceVocab::load(tokenizer)?.count_tokens(text))
}

/// Lowercase, split on whitespace, and split punctuation characters off as
/// separate tokens.
fn basic_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut current = String::new();
        for c in raw.to_lowercase().chars() {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}
