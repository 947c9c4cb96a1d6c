//! Read-only parser for WNDB-format lexicon files (`index.*` / `data.*` for
//! the four parts of speech) and dictionary-based candidate lookup.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::candidates::embedding::{cosine_similarity, EmbeddingSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartOfSpeech {
    Noun,
    Verb,
    Adjective,
    Adverb,
}

impl PartOfSpeech {
    pub const ALL: [PartOfSpeech; 4] = [
        PartOfSpeech::Noun,
        PartOfSpeech::Verb,
        PartOfSpeech::Adjective,
        PartOfSpeech::Adverb,
    ];

    fn suffix(self) -> &'static str {
        match self {
            PartOfSpeech::Noun => "noun",
            PartOfSpeech::Verb => "verb",
            PartOfSpeech::Adjective => "adj",
            PartOfSpeech::Adverb => "adv",
        }
    }
}

/// An in-memory WordNet database: per part of speech, an index from lemma to
/// synset offsets, and the synset word lists from the data files.
#[derive(Debug, Default)]
pub struct WordNet {
    index: HashMap<PartOfSpeech, HashMap<String, Vec<u64>>>,
    synsets: HashMap<PartOfSpeech, HashMap<u64, Vec<String>>>,
}

impl WordNet {
    /// Load `index.{noun,verb,adj,adv}` and `data.{noun,verb,adj,adv}` from a
    /// WNDB directory. License header lines (leading whitespace) are skipped.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut wn = WordNet::default();
        for pos in PartOfSpeech::ALL {
            let index_path = dir.join(format!("index.{}", pos.suffix()));
            let data_path = dir.join(format!("data.{}", pos.suffix()));
            wn.index.insert(pos, parse_index(&index_path)?);
            wn.synsets.insert(pos, parse_data(&data_path)?);
        }
        Ok(wn)
    }

    pub fn contains(&self, word: &str) -> bool {
        let lemma = word.to_lowercase();
        PartOfSpeech::ALL
            .iter()
            .any(|pos| self.index[pos].contains_key(&lemma))
    }

    /// All lemma words across all synsets of `word`, in part-of-speech and
    /// synset order, deduplicated by first occurrence. Multiword lemmas keep
    /// their underscores; callers decide whether to drop them.
    pub fn synonym_lemmas(&self, word: &str) -> Vec<String> {
        let lemma = word.to_lowercase();
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for pos in PartOfSpeech::ALL {
            let Some(offsets) = self.index[&pos].get(&lemma) else {
                continue;
            };
            for offset in offsets {
                let Some(words) = self.synsets[&pos].get(offset) else {
                    continue;
                };
                for w in words {
                    if seen.insert(w.clone()) {
                        out.push(w.clone());
                    }
                }
            }
        }
        out
    }
}

fn parse_index(path: &Path) -> Result<HashMap<String, Vec<u64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut map: HashMap<String, Vec<u64>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |what: &str| Error::WordNet(format!(
            "{}:{}: {what}",
            path.display(),
            lineno + 1
        ));
        if fields.len() < 6 {
            return Err(parse_err("short index line"));
        }
        let lemma = fields[0].to_string();
        let synset_cnt: usize = fields[2]
            .parse()
            .map_err(|_| parse_err("bad synset_cnt"))?;
        let p_cnt: usize = fields[3].parse().map_err(|_| parse_err("bad p_cnt"))?;
        // lemma pos synset_cnt p_cnt [symbols...] sense_cnt tagsense_cnt offsets...
        let offset_start = 4 + p_cnt + 2;
        if fields.len() < offset_start + synset_cnt {
            return Err(parse_err("truncated offset list"));
        }
        let offsets = fields[offset_start..offset_start + synset_cnt]
            .iter()
            .map(|s| s.parse::<u64>().map_err(|_| parse_err("bad offset")))
            .collect::<Result<Vec<u64>>>()?;
        map.insert(lemma, offsets);
    }
    Ok(map)
}

fn parse_data(path: &Path) -> Result<HashMap<u64, Vec<String>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut map = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let body = line.split(" | ").next().unwrap_or(&line);
        let fields: Vec<&str> = body.split_whitespace().collect();
        let parse_err = |what: &str| Error::WordNet(format!(
            "{}:{}: {what}",
            path.display(),
            lineno + 1
        ));
        if fields.len() < 4 {
            return Err(parse_err("short data line"));
        }
        let offset: u64 = fields[0].parse().map_err(|_| parse_err("bad offset"))?;
        // w_cnt is two-digit hexadecimal.
        let w_cnt = usize::from_str_radix(fields[3], 16).map_err(|_| parse_err("bad w_cnt"))?;
        if fields.len() < 4 + 2 * w_cnt {
            return Err(parse_err("truncated word list"));
        }
        let mut words = Vec::with_capacity(w_cnt);
        for i in 0..w_cnt {
            let raw = fields[4 + 2 * i];
            words.push(strip_adj_marker(raw).to_string());
        }
        map.insert(offset, words);
    }
    Ok(map)
}

/// Adjective lemmas may carry a syntactic marker suffix: `(a)`, `(p)`, `(ip)`.
fn strip_adj_marker(word: &str) -> &str {
    for marker in ["(a)", "(p)", "(ip)"] {
        if let Some(stripped) = word.strip_suffix(marker) {
            return stripped;
        }
    }
    word
}

/// Dictionary candidates for `word`: the lemma words of all its synsets,
/// minus the word itself and multiword lemmas, scored by cosine similarity
/// to the original in the embedding space (0 when either side is
/// out-of-vocabulary), sorted non-increasing, truncated to `top`.
pub fn wordnet_candidates(
    lexicon: &WordNet,
    space: &EmbeddingSpace,
    word: &str,
    top: usize,
) -> Vec<(String, f64)> {
    let word_lower = word.to_lowercase();
    let word_vec = space.vector_of(word);
    let mut scored: Vec<(String, f64)> = lexicon
        .synonym_lemmas(word)
        .into_iter()
        .filter(|lemma| lemma.to_lowercase() != word_lower)
        .filter(|lemma| !lemma.contains('_'))
        .map(|lemma| {
            let score = match (word_vec, space.vector_of(&lemma)) {
                (Some(a), Some(b)) => cosine_similarity(a, b).expect("same-space dims"),
                _ => 0.0,
            };
            (lemma, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top);
    scored
}
