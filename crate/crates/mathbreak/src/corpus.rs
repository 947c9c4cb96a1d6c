//! Benchmark corpus loading and answer canonicalization.
//!
//! Datasets are line-delimited JSON records with fields `id` (optional),
//! `question`, and `answer`. Gold and model answers are reduced to a
//! [`CanonicalAnswer`] so equality checks are exact: numeric answers compare
//! as arbitrary-precision rationals, everything else as a
//! formatting-normalized string.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which benchmark convention a dataset follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Grade-school word problems; plain-text questions, integer-ish answers,
    /// gold answers may end with a `#### N` final-answer delimiter.
    #[serde(rename = "gsm8k-style")]
    Gsm8k,
    /// Competition problems; LaTeX markup in questions and answers.
    #[serde(rename = "math500-style")]
    Math500,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Gsm8k => write!(f, "gsm8k-style"),
            TaskKind::Math500 => write!(f, "math500-style"),
        }
    }
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub question: String,
    pub gold_answer_raw: String,
    pub task_kind: TaskKind,
}

/// Canonical answer kind after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Integer,
    Rational,
    Decimal,
    Symbolic,
}

/// A normalized answer. Numeric kinds carry an exact rational value;
/// symbolic answers carry a whitespace- and formatting-normalized string.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    pub value: String,
    pub numeric_value: Option<BigRational>,
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// Load a line-delimited dataset. Missing `id` fields are auto-assigned the
/// zero-based record index; record order is preserved.
pub fn load_dataset(path: &Path, task_kind: TaskKind) -> Result<Vec<QuestionItem>> {
    #[derive(Deserialize)]
    struct RawRecord {
        id: Option<String>,
        question: Option<String>,
        answer: Option<String>,
    }

    let display = path.display().to_string();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: display.clone(),
            line: lineno,
            reason: format!("malformed record: {e}"),
        })?;
        let question = raw.question.ok_or_else(|| Error::Dataset {
            path: display.clone(),
            line: lineno,
            reason: "missing required field \"question\"".into(),
        })?;
        let answer = raw.answer.ok_or_else(|| Error::Dataset {
            path: display.clone(),
            line: lineno,
            reason: "missing required field \"answer\"".into(),
        })?;
        if question.is_empty() {
            return Err(Error::Dataset {
                path: display.clone(),
                line: lineno,
                reason: "empty question".into(),
            });
        }
        if answer.is_empty() {
            return Err(Error::Dataset {
                path: display.clone(),
                line: lineno,
                reason: "empty answer".into(),
            });
        }
        items.push(QuestionItem {
            id: raw.id.unwrap_or_else(|| items.len().to_string()),
            question,
            gold_answer_raw: answer,
            task_kind,
        });
    }
    let mut seen = std::collections::HashSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::Dataset {
                path: display,
                line: 0,
                reason: format!("duplicate item id {:?}", item.id),
            });
        }
    }
    Ok(items)
}

static INTEGER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[+-]?[0-9]+$").unwrap());
static FRACTION_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^([+-]?[0-9]+)/([0-9]+)$").unwrap());
static DECIMAL_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^[+-]?([0-9]+\.[0-9]*|\.[0-9]+)$").unwrap());

/// Normalize a raw answer string into a [`CanonicalAnswer`].
///
/// Strips final-answer delimiters (`#### N`), boxed wrappers, math
/// delimiters, currency symbols, and thousands separators; parses
/// integers/fractions/decimals as exact rationals (fractions reduced); any
/// remaining non-numeric expression becomes a whitespace-squeezed symbolic
/// string. Normalization is idempotent.
pub fn normalize_answer(raw: &str, _task_kind: TaskKind) -> Result<CanonicalAnswer> {
    let mut s = raw.trim().to_string();
    if s.is_empty() {
        return Err(Error::UnparseableAnswer(raw.to_string()));
    }

    // Gold answers may carry a final-answer delimiter; keep the tail.
    if let Some(pos) = s.rfind("####") {
        s = s[pos + 4..].trim().to_string();
    }

    // Peel wrappers until stable: boxed expressions and math delimiters can nest.
    loop {
        let before = s.clone();
        if let Some(content) = last_boxed_content(&s) {
            s = content.trim().to_string();
        }
        s = strip_outer_math_delimiters(&s);
        if s == before {
            break;
        }
    }

    let mut t = latex_cleanup(&s);
    t = rewrite_simple_frac(&t);
    t = t.replace("\\pi", "π");
    let t = t
        .trim()
        .trim_end_matches(['.', ',', ';', ':'])
        .trim()
        .to_string();

    if t.is_empty() {
        return Err(Error::UnparseableAnswer(raw.to_string()));
    }

    if let Some(answer) = try_numeric(&t) {
        return Ok(answer);
    }

    // Symbolic fallback: compare after removing all whitespace.
    let value: String = t.chars().filter(|c| !c.is_whitespace()).collect();
    if value.is_empty() {
        return Err(Error::UnparseableAnswer(raw.to_string()));
    }
    Ok(CanonicalAnswer {
        kind: AnswerKind::Symbolic,
        value,
        numeric_value: None,
    })
}

/// Exact answer equality: numeric kinds compare as rationals, symbolic kinds
/// as normalized strings; a numeric never equals a symbolic.
pub fn answers_match(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (&a.numeric_value, &b.numeric_value) {
        (Some(x), Some(y)) => x == y,
        (None, None) => a.value == b.value,
        _ => false,
    }
}

/// Content of the last `\boxed{...}` in `s`, brace-balanced.
pub(crate) fn last_boxed_content(s: &str) -> Option<String> {
    let marker = "\\boxed{";
    let start = s.rfind(marker)?;
    let inner_start = start + marker.len();
    let bytes = s.as_bytes();
    let mut depth = 1usize;
    let mut i = inner_start;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(s[inner_start..i].to_string());
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn strip_outer_math_delimiters(s: &str) -> String {
    let mut t = s.trim();
    loop {
        let before = t;
        for (open, close) in [("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")] {
            if t.len() > open.len() + close.len() - 1
                && t.starts_with(open)
                && t.ends_with(close)
            {
                t = t[open.len()..t.len() - close.len()].trim();
            }
        }
        if t == before {
            return t.to_string();
        }
    }
}

static TEXT_CMD_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\\text\s*\{([^{}]*)\}").unwrap());

fn latex_cleanup(s: &str) -> String {
    let mut t = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac");
    t = t.replace("\\left", "").replace("\\right", "");
    t = t.replace("\\!", "").replace("\\,", "").replace("\\;", "");
    t = TEXT_CMD_RE.replace_all(&t, "$1").into_owned();
    t = t.replace("\\$", "$");
    t.replace('\u{2212}', "-")
}

/// Rewrite `\frac{A}{B}` as `A/B` when the fraction is not glued to adjacent
/// alphanumerics (mixed numbers like `1\frac{1}{2}` stay untouched so their
/// value is not corrupted). Applied repeatedly for nested fractions.
fn rewrite_simple_frac(s: &str) -> String {
    let mut t = s.to_string();
    loop {
        let Some(pos) = t.find("\\frac{") else {
            return t;
        };
        let Some((a, b, end)) = parse_frac_args(&t, pos) else {
            return t;
        };
        let prev_ok = t[..pos]
            .chars()
            .last()
            .is_none_or(|c| !c.is_alphanumeric());
        let next_ok = t[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if !prev_ok || !next_ok {
            return t;
        }
        let a = rewrite_simple_frac(&a);
        let b = rewrite_simple_frac(&b);
        t = format!("{}{}/{}{}", &t[..pos], a, b, &t[end..]);
    }
}

fn parse_frac_args(s: &str, frac_pos: usize) -> Option<(String, String, usize)> {
    let first_open = frac_pos + "\\frac".len();
    let (a, after_a) = balanced_brace_group(s, first_open)?;
    let (b, after_b) = balanced_brace_group(s, after_a)?;
    Some((a, b, after_b))
}

fn balanced_brace_group(s: &str, open_pos: usize) -> Option<(String, usize)> {
    let bytes = s.as_bytes();
    if open_pos >= bytes.len() || bytes[open_pos] != b'{' {
        return None;
    }
    let mut depth = 1usize;
    let mut i = open_pos + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((s[open_pos + 1..i].to_string(), i + 1));
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn try_numeric(t: &str) -> Option<CanonicalAnswer> {
    // Currency symbols and thousands separators do not change the value;
    // a trailing percent sign follows the benchmarks' "answer in percent"
    // convention ("40%" and "40" agree).
    let mut u: String = t
        .chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | '¥'))
        .collect::<String>()
        .trim()
        .to_string();
    if let Some(stripped) = u.strip_suffix('%') {
        u = stripped.trim().to_string();
    }
    let u = u.replace(',', "");

    if INTEGER_RE.is_match(&u) {
        let n: BigInt = u.parse().ok()?;
        return Some(integer_answer(n));
    }
    if let Some(caps) = FRACTION_RE.captures(&u) {
        let num: BigInt = caps[1].parse().ok()?;
        let den: BigInt = caps[2].parse().ok()?;
        if den.is_zero() {
            return None;
        }
        let r = BigRational::new(num, den);
        if r.denom().is_one() {
            return Some(integer_answer(r.numer().clone()));
        }
        return Some(CanonicalAnswer {
            kind: AnswerKind::Rational,
            value: format!("{}/{}", r.numer(), r.denom()),
            numeric_value: Some(r),
        });
    }
    if DECIMAL_RE.is_match(&u) {
        let negative = u.starts_with('-');
        let digits = u.trim_start_matches(['+', '-']);
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        let int_part = if int_part.is_empty() { "0" } else { int_part };
        let mut numer: BigInt = format!("{int_part}{frac_part}").parse().ok()?;
        if negative {
            numer = -numer;
        }
        let denom = BigInt::from(10u8).pow(frac_part.len() as u32);
        let r = BigRational::new(numer, denom);
        if r.denom().is_one() {
            return Some(integer_answer(r.numer().clone()));
        }
        return Some(CanonicalAnswer {
            kind: AnswerKind::Decimal,
            value: canonical_decimal(&r),
            numeric_value: Some(r),
        });
    }
    None
}

fn integer_answer(n: BigInt) -> CanonicalAnswer {
    CanonicalAnswer {
        kind: AnswerKind::Integer,
        value: n.to_string(),
        numeric_value: Some(BigRational::from_integer(n)),
    }
}

/// Shortest decimal string for a rational whose (reduced) denominator
/// divides a power of ten, i.e. factors as 2^a * 5^b.
fn canonical_decimal(r: &BigRational) -> String {
    let sign = if r.is_negative() { "-" } else { "" };
    let abs = r.abs();
    let mut den = abs.denom().clone();
    let two = BigInt::from(2u8);
    let five = BigInt::from(5u8);
    let mut twos = 0u32;
    let mut fives = 0u32;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    debug_assert!(den.is_one(), "denominator must divide a power of ten");
    let scale = twos.max(fives);
    let scaled = abs.numer() * BigInt::from(10u8).pow(scale) / abs.denom();
    let digits = format!("{:0>width$}", scaled.to_string(), width = (scale + 1) as usize);
    let split = digits.len() - scale as usize;
    let (int_part, frac_part) = digits.split_at(split);
    let frac_part = frac_part.trim_end_matches('0');
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}
