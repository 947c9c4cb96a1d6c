//! Final-answer extraction from model responses.
//!
//! Cascade: the content of the last boxed expression, else the text after
//! the last "final answer is" / "Answer:" marker, else the last standalone
//! number; the result is canonicalized by [`normalize_answer`].

use once_cell::sync::Lazy;
use regex::Regex;

use crate::corpus::{last_boxed_content, normalize_answer, CanonicalAnswer, TaskKind};
use crate::error::{Error, Result};

static NUMBER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"[-+]?[\$€£]?\d[\d,]*(?:\.\d+)?%?").unwrap());

pub fn extract_final_answer(response_text: &str, task_kind: TaskKind) -> Result<CanonicalAnswer> {
    if response_text.trim().is_empty() {
        return Err(Error::NoAnswerFound);
    }

    if let Some(content) = last_boxed_content(response_text) {
        if let Ok(answer) = normalize_answer(&content, task_kind) {
            return Ok(answer);
        }
    }

    if let Some(after) = after_last_marker(response_text) {
        let line = after.split('\n').next().unwrap_or("").trim();
        let line = line.trim_start_matches([':', ' ']).trim();
        let line = line.trim_end_matches(['.', ',', ';', '!']).trim();
        if !line.is_empty() {
            if !line.contains(char::is_whitespace) {
                if let Ok(answer) = normalize_answer(line, task_kind) {
                    return Ok(answer);
                }
            } else if let Some(num) = last_standalone_number(line) {
                if let Ok(answer) = normalize_answer(&num, task_kind) {
                    return Ok(answer);
                }
            }
        }
    }

    if let Some(num) = last_standalone_number(response_text) {
        if let Ok(answer) = normalize_answer(&num, task_kind) {
            return Ok(answer);
        }
    }

    Err(Error::NoAnswerFound)
}

const MARKERS: [&str; 2] = ["final answer is", "answer:"];

/// Byte position just past the last (case-insensitive) marker, with the
/// remaining text.
fn after_last_marker(text: &str) -> Option<&str> {
    let mut best: Option<usize> = None;
    for marker in MARKERS {
        if let Some(pos) = rfind_ascii_ci(text, marker) {
            let end = pos + marker.len();
            best = Some(best.map_or(end, |b: usize| b.max(end)));
        }
    }
    best.map(|end| &text[end..])
}

fn rfind_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len())
        .rev()
        .find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Last number not glued to a letter on either side.
fn last_standalone_number(text: &str) -> Option<String> {
    let mut last = None;
    for m in NUMBER_RE.find_iter(text) {
        let before_ok = text[..m.start()]
            .chars()
            .last()
            .is_none_or(|c| !c.is_alphabetic());
        let after_ok = text[m.end()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphabetic());
        if before_ok && after_ok {
            last = Some(m.as_str().to_string());
        }
    }
    last
}
