//! Shared scripted-scenario fixtures for integration tests.
//!
//! The toy question is "Josh buys a house." with gold answer 64. With the
//! toy embedding space, the bundled mini WordNet, and the scripted mask
//! distributions below, the candidate try order is fully hand-enumerable:
//!
//! - position 0 "Josh":  he (mlm), she (mlm)
//! - position 1 "buys":  buying (embedding), sells (mlm), owns (mlm)
//! - position 2 "a":     he (embedding), the (mlm), his (mlm)
//! - position 3 "house": home (embedding), dwelling (wordnet),
//!   mansion (wordnet), car (mlm)
//!
//! Twelve candidates in total, so a never-failing target exhausts after
//! 1 + 12 target queries.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mathbreak::candidates::{EmbeddingSpace, WordNet};
use mathbreak::corpus::{QuestionItem, TaskKind};
use mathbreak::engine::DEFAULT_JUDGE_PROMPT;
use mathbreak::gateway::{ModelEndpoint, ScriptedReply, ScriptedTable};

pub const JOSH_QUESTION: &str = "Josh buys a house.";
pub const JOSH_GOLD: &str = "64";
pub const CORRECT_RESPONSE: &str = "The answer is \\boxed{64}.";
pub const WRONG_RESPONSE: &str = "The answer is \\boxed{50}.";

/// The hand-enumerated candidate try order: (position, word, is_local).
pub fn expected_try_order() -> Vec<(usize, &'static str, bool)> {
    vec![
        (0, "he", false),
        (0, "she", false),
        (1, "buying", true),
        (1, "sells", false),
        (1, "owns", false),
        (2, "he", true),
        (2, "the", false),
        (2, "his", false),
        (3, "home", true),
        (3, "dwelling", false),
        (3, "mansion", false),
        (3, "car", false),
    ]
}

/// The perturbed text a given try-order entry produces.
pub fn perturbed_text_for(position: usize, word: &str, is_local: bool) -> String {
    let spans = mathbreak::perturb::tokenize_words(JOSH_QUESTION);
    if is_local {
        mathbreak::perturb::apply_local(JOSH_QUESTION, &spans[position], word)
            .unwrap()
            .text
    } else {
        mathbreak::perturb::apply_global(JOSH_QUESTION, &spans[position].surface, word)
            .unwrap()
            .text
    }
}

pub fn toy_space() -> EmbeddingSpace {
    EmbeddingSpace::from_vectors(vec![
        ("Josh".into(), vec![1.0, 0.0, 0.0, 0.0]),
        ("buys".into(), vec![0.0, 1.0, 0.0, 0.0]),
        ("buying".into(), vec![0.0, 0.95, 0.312, 0.0]),
        ("a".into(), vec![0.0, 0.0, 1.0, 0.0]),
        ("house".into(), vec![0.0, 0.0, 0.0, 1.0]),
        ("home".into(), vec![0.0, 0.1, 0.0, 0.995]),
        ("he".into(), vec![0.6, 0.2, 0.77, 0.0]),
        ("she".into(), vec![0.7, 0.1, 0.3, 0.64]),
    ])
    .unwrap()
}

pub fn write_toy_space_file(dir: &Path) -> PathBuf {
    let path = dir.join("toy.vec");
    let rows = [
        ("Josh", [1.0, 0.0, 0.0, 0.0]),
        ("buys", [0.0, 1.0, 0.0, 0.0]),
        ("buying", [0.0, 0.95, 0.312, 0.0]),
        ("a", [0.0, 0.0, 1.0, 0.0]),
        ("house", [0.0, 0.0, 0.0, 1.0]),
        ("home", [0.0, 0.1, 0.0, 0.995]),
        ("he", [0.6, 0.2, 0.77, 0.0]),
        ("she", [0.7, 0.1, 0.3, 0.64]),
    ];
    let mut text = format!("{} 4\n", rows.len());
    for (token, v) in rows {
        text.push_str(&format!("{token} {} {} {} {}\n", v[0], v[1], v[2], v[3]));
    }
    std::fs::write(&path, text).unwrap();
    path
}

pub fn wordnet_fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/wndb")
}

pub fn fixture_wordnet() -> WordNet {
    WordNet::load(&wordnet_fixture_dir()).unwrap()
}

pub fn josh_item() -> QuestionItem {
    QuestionItem {
        id: "josh-toy".into(),
        question: JOSH_QUESTION.into(),
        gold_answer_raw: JOSH_GOLD.into(),
        task_kind: TaskKind::Gsm8k,
    }
}

/// Mask-fill distributions for every attackable position of the question.
pub fn mask_distributions() -> HashMap<String, Vec<(String, f64)>> {
    let mut m = HashMap::new();
    let dist = |pairs: &[(&str, f64)]| -> Vec<(String, f64)> {
        pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
    };
    m.insert(
        "[MASK] buys a house.".to_string(),
        dist(&[("he", 0.6), ("she", 0.25), ("it", 0.05)]),
    );
    m.insert(
        "Josh [MASK] a house.".to_string(),
        dist(&[("sells", 0.45), ("owns", 0.2), ("rents", 0.08)]),
    );
    m.insert(
        "Josh buys [MASK] house.".to_string(),
        dist(&[("the", 0.5), ("his", 0.3)]),
    );
    m.insert(
        "Josh buys a [MASK].".to_string(),
        dist(&[("car", 0.7), ("house", 0.2)]),
    );
    m
}

pub fn reply(text: &str) -> ScriptedReply {
    ScriptedReply {
        text: text.to_string(),
        completion_tokens: Some(text.split_whitespace().count() as u64),
        fail_times: 0,
    }
}

/// Target answering correctly everywhere except on the given perturbed
/// question texts.
pub fn target_table(wrong_on: &[&str]) -> ScriptedTable {
    let mut table = ScriptedTable::default();
    table
        .responses
        .insert(JOSH_QUESTION.to_string(), reply(CORRECT_RESPONSE));
    for text in wrong_on {
        table.responses.insert(text.to_string(), reply(WRONG_RESPONSE));
    }
    table.default_response = Some(reply(CORRECT_RESPONSE));
    table
}

pub fn masked_table() -> ScriptedTable {
    ScriptedTable {
        mask_distributions: mask_distributions(),
        ..Default::default()
    }
}

/// Judge that answers YES except on the exact judge prompts listed in
/// `no_on` (pairs of perturbed question text and target response).
pub fn judge_table(no_on: &[(&str, &str)]) -> ScriptedTable {
    let mut table = ScriptedTable::default();
    for (question, response) in no_on {
        let prompt = DEFAULT_JUDGE_PROMPT
            .replace("{question}", question)
            .replace("{gold}", JOSH_GOLD)
            .replace("{response}", response);
        table.responses.insert(prompt, reply("NO"));
    }
    table.default_response = Some(reply("YES"));
    table
}

pub fn write_endpoint(dir: &Path, name: &str, table: &ScriptedTable) -> ModelEndpoint {
    let path = dir.join(format!("{name}.table.json"));
    std::fs::write(&path, serde_json::to_string_pretty(table).unwrap()).unwrap();
    ModelEndpoint::scripted(name, path)
}
