//! Word tokenization and single-word substitution.
//!
//! A question is split into [`WordSpan`]s: whitespace tokens with surrounding
//! punctuation stripped off into context. Numeric tokens (amounts, currency,
//! percentages), tokens inside math delimiters, and embedded code blocks are
//! non-attackable; replacing a number would change the gold answer and
//! editing markup would break the problem statement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a replacement candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Embedding,
    Wordnet,
    Mlm,
}

/// Local = replace a single occurrence at one position; global = replace
/// every whole-word occurrence. Embedding candidates are applied locally,
/// dictionary and masked-LM candidates globally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementStrategy {
    Local,
    Global,
}

/// One word of a question, with byte offsets into the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    /// Ordinal among the emitted spans.
    pub index: usize,
    /// Byte offset of the first byte of `surface`.
    pub start: usize,
    /// Byte offset one past the last byte of `surface`.
    pub end: usize,
    pub surface: String,
    pub attackable: bool,
}

/// A single edit: word position, what was there, what replaced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub original_word: String,
    pub candidate_word: String,
}

/// A perturbed question together with its edit description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedQuestion {
    pub item_id: String,
    pub text: String,
    pub edits: Vec<Edit>,
    pub strategy: ReplacementStrategy,
    pub source: Option<CandidateSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionKind {
    Math,
    Code,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    start: usize,
    end: usize,
    kind: RegionKind,
}

fn find_code_regions(text: &str) -> Vec<Region> {
    let mut regions: Vec<Region> = Vec::new();
    for (open, close) in [("[asy]", "[/asy]"), ("```", "```")] {
        let mut from = 0;
        while let Some(rel) = text[from..].find(open) {
            let start = from + rel;
            if regions.iter().any(|r| start >= r.start && start < r.end) {
                from = start + open.len();
                continue;
            }
            let search_from = start + open.len();
            let end = match text[search_from..].find(close) {
                Some(rel2) => search_from + rel2 + close.len(),
                None => text.len(),
            };
            regions.push(Region {
                start,
                end,
                kind: RegionKind::Code,
            });
            from = end;
        }
    }
    regions.sort_by_key(|r| r.start);
    regions
}

/// Math and code regions of a question.
///
/// A bare `$` immediately followed by a digit is a currency literal (the
/// grade-school corpus writes "$80,000"); any other unescaped `$` opens a
/// math region if a closing `$` exists. `\(..\)`, `\[..\]`, `$$..$$`,
/// fenced code, and `[asy]..[/asy]` blocks are always protected.
fn protected_regions(text: &str) -> Vec<Region> {
    let mut regions = find_code_regions(text);
    let bytes = text.as_bytes();
    let code_snapshot: Vec<Region> = regions.clone();
    let in_code = |i: usize| {
        code_snapshot
            .iter()
            .find(|r| i >= r.start && i < r.end)
            .map(|r| r.end)
    };

    let find_unescaped_dollar = |from: usize| -> Option<usize> {
        let mut j = from;
        while j < bytes.len() {
            if bytes[j] == b'$' && (j == 0 || bytes[j - 1] != b'\\') {
                return Some(j);
            }
            j += 1;
        }
        None
    };

    let mut i = 0;
    while i < bytes.len() {
        if let Some(end) = in_code(i) {
            i = end;
            continue;
        }
        match bytes[i] {
            b'\\' => {
                if text[i..].starts_with("\\(") {
                    if let Some(rel) = text[i + 2..].find("\\)") {
                        let end = i + 2 + rel + 2;
                        regions.push(Region {
                            start: i,
                            end,
                            kind: RegionKind::Math,
                        });
                        i = end;
                        continue;
                    }
                } else if text[i..].starts_with("\\[") {
                    if let Some(rel) = text[i + 2..].find("\\]") {
                        let end = i + 2 + rel + 2;
                        regions.push(Region {
                            start: i,
                            end,
                            kind: RegionKind::Math,
                        });
                        i = end;
                        continue;
                    }
                }
                // Skip the escaped character (covers \$ currency in LaTeX
                // text); the escaped char may be multi-byte.
                i += 1;
                if i < bytes.len() {
                    i += 1;
                    while i < bytes.len() && !text.is_char_boundary(i) {
                        i += 1;
                    }
                }
            }
            b'$' => {
                if bytes.get(i + 1) == Some(&b'$') {
                    if let Some(rel) = text[i + 2..].find("$$") {
                        let end = i + 2 + rel + 2;
                        regions.push(Region {
                            start: i,
                            end,
                            kind: RegionKind::Math,
                        });
                        i = end;
                    } else {
                        i += 2;
                    }
                } else if bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) {
                    // Currency literal, not a delimiter.
                    i += 1;
                } else if let Some(j) = find_unescaped_dollar(i + 1) {
                    regions.push(Region {
                        start: i,
                        end: j + 1,
                        kind: RegionKind::Math,
                    });
                    i = j + 1;
                } else {
                    i += 1;
                }
            }
            _ => {
                i += 1;
                while i < bytes.len() && !text.is_char_boundary(i) {
                    i += 1;
                }
            }
        }
    }
    regions.sort_by_key(|r| r.start);
    regions
}

/// A token is numeric when it contains at least one digit and nothing but
/// digits, currency/percent signs, grouping punctuation, and sign characters.
fn is_numeric_token(tok: &str) -> bool {
    let mut has_digit = false;
    for c in tok.chars() {
        if c.is_ascii_digit() {
            has_digit = true;
        } else if !matches!(
            c,
            '$' | '€'
                | '£'
                | '¥'
                | '%'
                | ','
                | '.'
                | '+'
                | '-'
                | '\\'
                | '('
                | ')'
                | ':'
                | ';'
                | '!'
                | '?'
                | '"'
                | '\''
        ) {
            return false;
        }
    }
    has_digit
}

fn whitespace_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s, text.len()));
    }
    tokens
}

/// Split a question into word spans. Offsets always satisfy
/// `question[span.start..span.end] == span.surface`, spans are ordered and
/// non-overlapping, so splicing the spans back over the original separators
/// reproduces the input byte-for-byte.
pub fn tokenize_words(question: &str) -> Vec<WordSpan> {
    let regions = protected_regions(question);
    let tokens = whitespace_tokens(question);

    // Code regions become one span each, snapped outward to token boundaries.
    let mut code_spans: Vec<(usize, usize)> = Vec::new();
    for r in regions.iter().filter(|r| r.kind == RegionKind::Code) {
        let mut start = r.start;
        let mut end = r.end;
        for &(ts, te) in &tokens {
            if ts < r.end && te > r.start {
                start = start.min(ts);
                end = end.max(te);
            }
        }
        code_spans.push((start, end));
    }

    let in_math = |s: usize, e: usize| {
        regions
            .iter()
            .filter(|r| r.kind == RegionKind::Math)
            .any(|r| s < r.end && e > r.start)
    };
    let in_code = |s: usize, e: usize| code_spans.iter().any(|&(cs, ce)| s < ce && e > cs);

    let mut raw: Vec<(usize, usize, bool)> = Vec::new();
    let mut emitted_code: Vec<(usize, usize)> = Vec::new();
    for &(ts, te) in &tokens {
        if in_code(ts, te) {
            let &(cs, ce) = code_spans
                .iter()
                .find(|&&(cs, ce)| ts < ce && te > cs)
                .unwrap();
            if !emitted_code.contains(&(cs, ce)) {
                emitted_code.push((cs, ce));
                raw.push((cs, ce, false));
            }
            continue;
        }
        let tok = &question[ts..te];
        if in_math(ts, te) || is_numeric_token(tok) {
            raw.push((ts, te, false));
            continue;
        }
        // Strip leading/trailing punctuation into context; the core is the word.
        let core_start = ts + tok
            .char_indices()
            .find(|(_, c)| c.is_alphanumeric())
            .map(|(i, _)| i)
            .unwrap_or(tok.len());
        if core_start >= te {
            continue; // pure punctuation token
        }
        let core_end = ts
            + tok
                .char_indices()
                .rev()
                .find(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())
                .unwrap();
        let core = &question[core_start..core_end];
        let attackable = !is_numeric_token(core);
        raw.push((core_start, core_end, attackable));
    }

    raw.sort_by_key(|&(s, _, _)| s);
    raw.iter()
        .enumerate()
        .map(|(index, &(start, end, attackable))| WordSpan {
            index,
            start,
            end,
            surface: question[start..end].to_string(),
            attackable,
        })
        .collect()
}

/// Replace only the occurrence at the span's offsets.
pub fn apply_local(question: &str, span: &WordSpan, candidate: &str) -> Result<PerturbedQuestion> {
    if span.end > question.len()
        || span.start > span.end
        || question.get(span.start..span.end) != Some(span.surface.as_str())
    {
        return Err(Error::InvalidSpan(format!(
            "span {}..{} does not address {:?}",
            span.start, span.end, span.surface
        )));
    }
    if candidate == span.surface {
        return Err(Error::NullPerturbation(candidate.to_string()));
    }
    let mut text = String::with_capacity(question.len() + candidate.len());
    text.push_str(&question[..span.start]);
    text.push_str(candidate);
    text.push_str(&question[span.end..]);
    Ok(PerturbedQuestion {
        item_id: String::new(),
        text,
        edits: vec![Edit {
            position: span.index,
            original_word: span.surface.clone(),
            candidate_word: candidate.to_string(),
        }],
        strategy: ReplacementStrategy::Local,
        source: None,
    })
}

/// Replace every case-sensitive whole-word occurrence of `word`.
/// Occurrences inside math or code regions are left untouched.
pub fn apply_global(question: &str, word: &str, candidate: &str) -> Result<PerturbedQuestion> {
    if candidate == word {
        return Err(Error::NullPerturbation(word.to_string()));
    }
    let spans = tokenize_words(question);
    let hits: Vec<&WordSpan> = spans
        .iter()
        .filter(|s| s.attackable && s.surface == word)
        .collect();
    if hits.is_empty() {
        return Err(Error::NoOccurrence(word.to_string()));
    }
    let mut text = question.to_string();
    for span in hits.iter().rev() {
        text.replace_range(span.start..span.end, candidate);
    }
    let edits = hits
        .iter()
        .map(|span| Edit {
            position: span.index,
            original_word: span.surface.clone(),
            candidate_word: candidate.to_string(),
        })
        .collect();
    Ok(PerturbedQuestion {
        item_id: String::new(),
        text,
        edits,
        strategy: ReplacementStrategy::Global,
        source: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const JOSH: &str = "Josh decides to try flipping a house. He buys a house for $80,000 and then puts in $50,000 in repairs. This increased the value of the house by 150%. How much profit did he make?";

    #[test]
    fn simple_sentence_all_attackable() {
        let spans = tokenize_words("Josh decides to try flipping a house.");
        assert_eq!(spans.len(), 7);
        assert!(spans.iter().all(|s| s.attackable));
        assert_eq!(spans[6].surface, "house");
    }

    #[test]
    fn currency_token_single_non_attackable_span() {
        let spans = tokenize_words("$80,000");
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].surface, "$80,000");
        assert!(!spans[0].attackable);
    }

    #[test]
    fn offsets_are_consistent_and_ordered() {
        for q in [
            JOSH,
            "If $f(x) = \\frac{3x-2}{x-2}$, what is the value of $f(-2) +f(-1)+f(0)$? Express your answer as a common fraction.",
            "What percent of $x$ is equal to $40\\%$ of $50\\%$ of $x$?",
        ] {
            let spans = tokenize_words(q);
            let mut prev_end = 0;
            for s in &spans {
                assert_eq!(&q[s.start..s.end], s.surface, "span {s:?}");
                assert!(s.start >= prev_end, "overlap at {s:?}");
                prev_end = s.end;
            }
            // Splicing spans back over the original separators reproduces the
            // input byte-for-byte.
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for s in &spans {
                rebuilt.push_str(&q[cursor..s.start]);
                rebuilt.push_str(&s.surface);
                cursor = s.end;
            }
            rebuilt.push_str(&q[cursor..]);
            assert_eq!(rebuilt, q);
        }
    }

    #[test]
    fn currency_amounts_in_josh_question_not_attackable() {
        let spans = tokenize_words(JOSH);
        let currency: Vec<&WordSpan> = spans
            .iter()
            .filter(|s| s.surface.contains("0,000"))
            .collect();
        assert_eq!(currency.len(), 2);
        assert!(currency.iter().all(|s| !s.attackable));
        // The surrounding words stay attackable: "$...$" here is currency, not math.
        assert!(spans.iter().any(|s| s.surface == "then" && s.attackable));
        assert!(spans.iter().any(|s| s.surface == "puts" && s.attackable));
        let pct = spans.iter().find(|s| s.surface.contains("150")).unwrap();
        assert!(!pct.attackable);
    }

    #[test]
    fn math_region_tokens_not_attackable() {
        let q = "If $f(x) = \\frac{3x-2}{x-2}$, what is the value of $f(-2) +f(-1)+f(0)$? Express your answer as a common fraction.";
        let spans = tokenize_words(q);
        let first = &spans[0];
        assert_eq!(first.surface, "If");
        assert!(first.attackable);
        for s in &spans {
            if s.surface.contains("\\frac") || s.surface.contains("f(x)") {
                assert!(!s.attackable, "math token attackable: {s:?}");
            }
        }
        assert!(spans.iter().any(|s| s.surface == "common" && s.attackable));
    }

    #[test]
    fn asy_block_is_one_non_attackable_span() {
        let q = "Below is the graph.\n\n[asy]\nimport TrigMacros;\nlabel(\"$1$\", (0,1), E);\n[/asy]\n\nFind the smallest possible value of $c.$";
        let spans = tokenize_words(q);
        let code: Vec<&WordSpan> = spans.iter().filter(|s| s.surface.contains("[asy]")).collect();
        assert_eq!(code.len(), 1);
        assert!(!code[0].attackable);
        assert!(code[0].surface.contains("TrigMacros"));
        assert!(spans.iter().any(|s| s.surface == "graph" && s.attackable));
        assert!(spans.iter().any(|s| s.surface == "smallest" && s.attackable));
    }

    #[test]
    fn multibyte_text_and_escapes_tokenize_safely() {
        for q in [
            "what is \\π times two?",
            "naïve café — done",
            "emoji 🙂 mid sentence",
            "backslash at end \\",
            "stray dollar $ alone",
        ] {
            let spans = tokenize_words(q);
            for s in &spans {
                assert_eq!(&q[s.start..s.end], s.surface);
            }
        }
    }

    #[test]
    fn local_replaces_only_the_addressed_occurrence() {
        let spans = tokenize_words(JOSH);
        assert_eq!(spans[0].surface, "Josh");
        let p = apply_local(JOSH, &spans[0], "he").unwrap();
        assert_eq!(
            p.text,
            "he decides to try flipping a house. He buys a house for $80,000 and then puts in $50,000 in repairs. This increased the value of the house by 150%. How much profit did he make?"
        );
        assert_eq!(p.edits.len(), 1);
        assert_eq!(p.edits[0].position, 0);
        assert_eq!(p.strategy, ReplacementStrategy::Local);
    }

    #[test]
    fn local_second_occurrence_untouched() {
        let q = "Kylar went to the store to buy glasses for his new apartment. One glass costs $5, but every second glass costs only 60% of the price. Kylar wants to buy 16 glasses. How much does he need to pay for them?";
        let spans = tokenize_words(q);
        assert_eq!(spans[2].surface, "to");
        let p = apply_local(q, &spans[2], "_to").unwrap();
        assert!(p.text.starts_with("Kylar went _to the store to buy"));
        assert_eq!(p.text.matches("_to").count(), 1);
    }

    #[test]
    fn null_perturbation_rejected() {
        let spans = tokenize_words("Josh tries.");
        assert!(matches!(
            apply_local("Josh tries.", &spans[0], "Josh"),
            Err(Error::NullPerturbation(_))
        ));
    }

    #[test]
    fn stale_span_rejected() {
        let spans = tokenize_words("Josh tries.");
        assert!(matches!(
            apply_local("a different string", &spans[0], "he"),
            Err(Error::InvalidSpan(_))
        ));
        let bogus = WordSpan {
            index: 0,
            start: 5000,
            end: 5004,
            surface: "Josh".into(),
            attackable: true,
        };
        assert!(apply_local("Josh tries.", &bogus, "he").is_err());
    }

    #[test]
    fn global_replaces_every_whole_word_occurrence() {
        let p = apply_global("Josh likes math. Josh wins.", "Josh", "he").unwrap();
        assert_eq!(p.text, "he likes math. he wins.");
        assert_eq!(p.edits.len(), 2);
        assert_eq!(p.edits[0].position, 0);
        assert_eq!(p.edits[1].position, 3);
    }

    #[test]
    fn global_on_single_occurrence_equals_local() {
        let q = "Josh decides to try.";
        let spans = tokenize_words(q);
        let local = apply_local(q, &spans[0], "he").unwrap();
        let global = apply_global(q, "Josh", "he").unwrap();
        assert_eq!(local.text, global.text);
        assert_eq!(local.edits, global.edits);
    }

    #[test]
    fn global_is_case_sensitive() {
        let p = apply_global("Carla met carla and Carla left.", "Carla", "she").unwrap();
        assert_eq!(p.text, "she met carla and she left.");
        assert_eq!(p.edits.len(), 2);
    }

    #[test]
    fn global_does_not_touch_substrings() {
        let p = apply_global("to go together", "to", "at").unwrap();
        assert_eq!(p.text, "at go together");
    }

    #[test]
    fn global_zero_occurrences_is_error() {
        assert!(matches!(
            apply_global("nothing here", "Josh", "he"),
            Err(Error::NoOccurrence(_))
        ));
    }

    fn word_seq(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }

    proptest! {
        #[test]
        fn local_word_hamming_distance_is_one(
            words in proptest::collection::vec("[a-zA-Z]{1,8}", 1..12),
            pick in 0usize..12,
            candidate in "[a-z]{1,8}",
        ) {
            let q = words.join(" ");
            let spans = tokenize_words(&q);
            prop_assume!(!spans.is_empty());
            let span = &spans[pick % spans.len()];
            prop_assume!(span.surface != candidate);
            let p = apply_local(&q, span, &candidate).unwrap();
            let a = word_seq(&q);
            let b = word_seq(&p.text);
            prop_assert_eq!(a.len(), b.len());
            let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert_eq!(diff, 1);
        }

        #[test]
        fn global_leaves_no_whole_word_occurrence(
            words in proptest::collection::vec("[a-z]{1,6}", 1..12),
            pick in 0usize..12,
            candidate in "[A-Z]{1,6}",
        ) {
            let q = words.join(" ");
            let spans = tokenize_words(&q);
            prop_assume!(!spans.is_empty());
            let word = spans[pick % spans.len()].surface.clone();
            prop_assume!(word != candidate);
            let p = apply_global(&q, &word, &candidate).unwrap();
            let remaining = tokenize_words(&p.text)
                .into_iter()
                .filter(|s| s.surface == word)
                .count();
            prop_assert_eq!(remaining, 0);
            // Untouched positions keep their token.
            let a = word_seq(&q);
            let b = word_seq(&p.text);
            for (x, y) in a.iter().zip(&b) {
                if *x != word {
                    prop_assert_eq!(x, y);
                }
            }
        }
    }
}
