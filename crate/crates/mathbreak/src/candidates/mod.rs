//! Candidate replacement words for a target word, drawn from three sources:
//! embedding-space nearest neighbors (filtered for character quality and
//! morphological closeness, applied locally), WordNet synonyms, and
//! masked-LM predictions (both applied globally). The per-word candidate set
//! is the deduplicated union in source priority order.

pub mod embedding;
pub mod wordnet;

use once_cell::sync::Lazy;
use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{Error, Result};
use crate::perturb::{tokenize_words, CandidateSource, ReplacementStrategy};

pub use embedding::{cosine_similarity, embedding_neighbors, EmbeddingSpace};
pub use wordnet::{wordnet_candidates, WordNet};

/// A replacement word with its provenance and score (cosine similarity for
/// embedding/wordnet sources, predicted probability for the masked LM).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub word: String,
    pub source: CandidateSource,
    pub score: f64,
    pub replacement_strategy: ReplacementStrategy,
}

/// The merged, deduplicated candidate list for one word position.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub target_word: String,
    pub target_position: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// Check the structural invariants: no duplicates, never the target word,
    /// scores in range, local strategy exactly for embedding candidates.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            if c.word.is_empty() {
                return Err(Error::Config("empty candidate word".into()));
            }
            if c.word == self.target_word {
                return Err(Error::Config(format!(
                    "candidate equals target word {:?}",
                    self.target_word
                )));
            }
            if !seen.insert(c.word.clone()) {
                return Err(Error::Config(format!("duplicate candidate {:?}", c.word)));
            }
            let local = c.replacement_strategy == ReplacementStrategy::Local;
            if local != (c.source == CandidateSource::Embedding) {
                return Err(Error::Config(format!(
                    "candidate {:?}: strategy/source mismatch",
                    c.word
                )));
            }
            match c.source {
                CandidateSource::Embedding | CandidateSource::Wordnet => {
                    if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&c.score) {
                        return Err(Error::Config(format!(
                            "candidate {:?}: cosine score {} out of range",
                            c.word, c.score
                        )));
                    }
                }
                CandidateSource::Mlm => {
                    if !(c.score > 0.0 && c.score <= 1.0 + 1e-6) {
                        return Err(Error::Config(format!(
                            "candidate {:?}: probability {} out of range",
                            c.word, c.score
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Thresholds for candidate generation.
#[derive(Debug, Clone, Copy)]
pub struct CandidateParams {
    /// Embedding neighbors retrieved before filtering.
    pub embedding_k: usize,
    /// Dictionary candidates kept after cosine re-ranking.
    pub wordnet_top: usize,
    /// Masked-LM candidates must exceed this predicted probability.
    pub mlm_threshold: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            embedding_k: 10,
            wordnet_top: 5,
            mlm_threshold: 0.1,
        }
    }
}

/// Anything that can fill a single mask slot with a token distribution.
/// Implemented by the gateway for masked-LM endpoints and by test fixtures.
pub trait MaskFill {
    /// The mask token to substitute for the target word.
    fn mask_token(&self) -> String;
    /// Token distribution at the mask slot, probabilities descending.
    fn fill_mask(&self, masked_text: &str) -> Result<Vec<(String, f64)>>;
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || matches!(c,
            '\u{00C0}'..='\u{00D6}'
            | '\u{00D8}'..='\u{00F6}'
            | '\u{00F8}'..='\u{024F}'
            | '\u{1E00}'..='\u{1EFF}'
            | '\u{2C60}'..='\u{2C7F}'
            | '\u{A720}'..='\u{A7FF}')
}

fn is_punctuation_like(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{2000}'..='\u{206F}'   // general punctuation
            | '\u{3000}'..='\u{303F}' // CJK symbols and punctuation
            | '\u{FF00}'..='\u{FF0F}' // fullwidth forms (punctuation range)
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

/// Character-level quality predicate: no control characters, at least one
/// Latin-script letter, not pure punctuation. Digits and ASCII punctuation
/// are permitted as companions, so tokenizer artifacts like `_to` or `.If`
/// survive.
pub fn passes_char_filter(token: &str) -> bool {
    !token.is_empty()
        && !token.chars().any(char::is_control)
        && token.chars().any(is_latin_letter)
        && !token.chars().all(is_punctuation_like)
}

/// Retain tokens passing [`passes_char_filter`], preserving order.
pub fn char_filter(candidates: &[String]) -> Vec<String> {
    candidates
        .iter()
        .filter(|t| passes_char_filter(t))
        .cloned()
        .collect()
}

static STEMMER: Lazy<Stemmer> = Lazy::new(|| Stemmer::create(Algorithm::English));

/// English stem of a word (case-folded before stemming).
pub fn stem(word: &str) -> String {
    STEMMER.stem(&word.to_lowercase()).into_owned()
}

/// Morphology predicate: the candidate shares the original's stem, is within
/// case-insensitive edit distance 2, or one is a (case-insensitive) substring
/// of the other. The original word itself never passes.
pub fn passes_morphology_filter(original: &str, candidate: &str) -> bool {
    if candidate == original {
        return false;
    }
    let o = original.to_lowercase();
    let c = candidate.to_lowercase();
    stem(original) == stem(candidate)
        || strsim::levenshtein(&o, &c) <= 2
        || o.contains(&c)
        || c.contains(&o)
}

/// Retain candidates passing [`passes_morphology_filter`], preserving order.
pub fn morphology_filter(original: &str, candidates: &[String]) -> Vec<String> {
    candidates
        .iter()
        .filter(|c| passes_morphology_filter(original, c))
        .cloned()
        .collect()
}

/// Masked-LM candidates for the word at `position`: the word is replaced by
/// the mask token, the distribution at the slot is filtered to strictly
/// exceed `threshold`, and the original word plus subword continuation
/// fragments (`##...`) are excluded. Sorted non-increasing by probability.
pub fn mlm_candidates(
    mask_fill: &dyn MaskFill,
    question: &str,
    position: usize,
    threshold: f64,
) -> Result<Vec<(String, f64)>> {
    let spans = tokenize_words(question);
    let span = spans.get(position).ok_or_else(|| {
        Error::InvalidSpan(format!("position {position} out of range for question"))
    })?;
    let masked = crate::perturb::apply_local(question, span, &mask_fill.mask_token())?;
    let mut out: Vec<(String, f64)> = mask_fill
        .fill_mask(&masked.text)?
        .into_iter()
        .filter(|(token, p)| {
            *p > threshold && token != &span.surface && !token.starts_with("##")
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Generate, filter, and merge all three sub-candidate sets for the word at
/// `position`. Embedding neighbors run through the character and morphology
/// filters and are applied locally; dictionary and masked-LM candidates are
/// applied globally. The union is deduplicated by first occurrence in
/// priority order: embedding, then WordNet, then masked LM.
///
/// A masked-LM transport failure degrades to the two offline sources rather
/// than failing the whole set; retries already happened inside the gateway.
pub fn build_candidate_set(
    space: &EmbeddingSpace,
    lexicon: &WordNet,
    mask_fill: &dyn MaskFill,
    question: &str,
    position: usize,
    params: &CandidateParams,
) -> Result<CandidateSet> {
    let spans = tokenize_words(question);
    let span = spans.get(position).ok_or_else(|| {
        Error::InvalidSpan(format!("position {position} out of range for question"))
    })?;
    let word = span.surface.clone();

    let mut candidates: Vec<Candidate> = Vec::new();
    let push = |word: &str, target: &str, source, score, candidates: &mut Vec<Candidate>| {
        if word == target || candidates.iter().any(|c| c.word == word) {
            return;
        }
        candidates.push(Candidate {
            word: word.to_string(),
            source,
            score,
            replacement_strategy: if source == CandidateSource::Embedding {
                ReplacementStrategy::Local
            } else {
                ReplacementStrategy::Global
            },
        });
    };

    for (token, score) in embedding_neighbors(space, &word, params.embedding_k) {
        if passes_char_filter(&token) && passes_morphology_filter(&word, &token) {
            push(&token, &word, CandidateSource::Embedding, score, &mut candidates);
        }
    }
    for (token, score) in wordnet_candidates(lexicon, space, &word, params.wordnet_top) {
        push(&token, &word, CandidateSource::Wordnet, score, &mut candidates);
    }
    match mlm_candidates(mask_fill, question, position, params.mlm_threshold) {
        Ok(predicted) => {
            for (token, p) in predicted {
                push(&token, &word, CandidateSource::Mlm, p, &mut candidates);
            }
        }
        Err(e) => {
            eprintln!("warning: masked-LM source skipped for {word:?}: {e}");
        }
    }

    let set = CandidateSet {
        target_word: word,
        target_position: position,
        candidates,
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn char_filter_examples() {
        let input: Vec<String> = ["he", "\u{7}x", "，", "!!!"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(char_filter(&input), vec!["he".to_string()]);
        assert!(char_filter(&[]).is_empty());

        let kept: Vec<String> = ["co-worker", "_to", ".If"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(char_filter(&kept), kept);
    }

    #[test]
    fn char_filter_rejects_non_latin() {
        assert!(!passes_char_filter("你好"));
        assert!(!passes_char_filter("123"));
        assert!(passes_char_filter("naïve"));
        assert!(passes_char_filter("x1"));
    }

    #[test]
    fn morphology_examples() {
        let cands: Vec<String> = ["walking", "walked", "jump"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            morphology_filter("walk", &cands),
            vec!["walking".to_string(), "walked".to_string()]
        );
        assert!(!passes_morphology_filter("Josh", "Josh"));
        assert!(passes_morphology_filter("to", "_to"));
        assert!(passes_morphology_filter("If", ".If"));
        assert!(passes_morphology_filter("Carla", "carla"));
    }

    /// Independent suffix-stripping stemmer oracle for the stem-equality arm.
    /// Strips one inflectional suffix, then collapses a doubled trailing
    /// consonant (flipping -> flipp -> flip).
    fn oracle_stem(word: &str) -> String {
        let w = word.to_lowercase();
        for suffix in ["ings", "ing", "edly", "ed", "ies", "es", "s", "ly"] {
            if let Some(stripped) = w.strip_suffix(suffix) {
                if stripped.len() >= 3 {
                    let chars: Vec<char> = stripped.chars().collect();
                    let n = chars.len();
                    if n >= 2 && chars[n - 1] == chars[n - 2] && !"aeiou".contains(chars[n - 1]) {
                        return chars[..n - 1].iter().collect();
                    }
                    return stripped.to_string();
                }
            }
        }
        w
    }

    #[test]
    fn stem_agrees_with_suffix_stripping_oracle_on_fixture() {
        for (a, b) in [
            ("walk", "walking"),
            ("walk", "walked"),
            ("walk", "walks"),
            ("jump", "jumping"),
            ("buy", "buys"),
            ("flip", "flipping"),
        ] {
            assert_eq!(oracle_stem(a), oracle_stem(b), "oracle on {a}/{b}");
            assert_eq!(stem(a), stem(b), "stemmer on {a}/{b}");
        }
        for (a, b) in [("walk", "jump"), ("house", "store")] {
            assert_ne!(oracle_stem(a), oracle_stem(b));
            assert_ne!(stem(a), stem(b));
        }
    }

    struct FixtureMask(HashMap<String, Vec<(String, f64)>>);

    impl MaskFill for FixtureMask {
        fn mask_token(&self) -> String {
            "[MASK]".into()
        }
        fn fill_mask(&self, masked_text: &str) -> crate::Result<Vec<(String, f64)>> {
            self.0
                .get(masked_text)
                .cloned()
                .ok_or_else(|| Error::Mask(format!("no fixture for {masked_text:?}")))
        }
    }

    fn mask_fixture(masked: &str, dist: &[(&str, f64)]) -> FixtureMask {
        let mut m = HashMap::new();
        m.insert(
            masked.to_string(),
            dist.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
        );
        FixtureMask(m)
    }

    #[test]
    fn mlm_threshold_application() {
        let q = "big cat sat";
        let fx = mask_fixture(
            "[MASK] cat sat",
            &[("the", 0.5), ("a", 0.3), ("xyz", 0.05)],
        );
        let got = mlm_candidates(&fx, q, 0, 0.1).unwrap();
        assert_eq!(
            got,
            vec![("the".to_string(), 0.5), ("a".to_string(), 0.3)]
        );
    }

    #[test]
    fn mlm_all_below_threshold_yields_empty() {
        let fx = mask_fixture("[MASK] cat sat", &[("the", 0.1), ("a", 0.02)]);
        assert!(mlm_candidates(&fx, "the cat sat", 0, 0.1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mlm_excludes_original_and_subwords() {
        let fx = mask_fixture(
            "the [MASK] sat",
            &[("cat", 0.6), ("##at", 0.3), ("dog", 0.2)],
        );
        let got = mlm_candidates(&fx, "the cat sat", 1, 0.1).unwrap();
        assert_eq!(got, vec![("dog".to_string(), 0.2)]);
    }

    #[test]
    fn mlm_masks_fig1_subject_position() {
        // Masking the sentence-initial name yields pronoun-like candidates
        // from the recorded fixture distribution.
        let q = "Josh decides to try flipping a house.";
        let fx = mask_fixture(
            "[MASK] decides to try flipping a house.",
            &[("he", 0.42), ("she", 0.31), ("it", 0.08)],
        );
        let got = mlm_candidates(&fx, q, 0, 0.1).unwrap();
        assert_eq!(got[0].0, "he");
        assert_eq!(got.len(), 2);
    }

    fn toy_space() -> EmbeddingSpace {
        EmbeddingSpace::from_vectors(vec![
            ("buy".into(), vec![1.0, 0.0, 0.0]),
            ("buys".into(), vec![0.98, 0.1, 0.0]),
            ("buying".into(), vec![0.95, 0.2, 0.0]),
            ("purchase".into(), vec![0.9, 0.1, 0.1]),
            ("sell".into(), vec![0.3, 0.9, 0.0]),
            ("，".into(), vec![0.99, 0.05, 0.0]),
            ("bribe".into(), vec![0.2, 0.9, 0.0]),
            ("bargain".into(), vec![0.6, 0.4, 0.0]),
            ("steal".into(), vec![0.1, 0.2, 0.9]),
        ])
        .unwrap()
    }

    fn fixture_wordnet() -> WordNet {
        let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/wndb");
        WordNet::load(&dir).unwrap()
    }

    #[test]
    fn build_set_merges_sources_in_priority_order() {
        let space = toy_space();
        let wn = fixture_wordnet();
        let q = "thieves buy rarely";
        let fx = mask_fixture(
            "thieves [MASK] rarely",
            &[("sell", 0.4), ("buy", 0.3), ("purchase", 0.2)],
        );
        let set = build_candidate_set(&space, &wn, &fx, q, 1, &CandidateParams::default()).unwrap();
        assert_eq!(set.target_word, "buy");
        set.validate().unwrap();

        // Embedding survivors first: "buys"/"buying" pass morphology,
        // "，" fails the char filter, "purchase"/"sell"/... fail morphology.
        let words: Vec<&str> = set.candidates.iter().map(|c| c.word.as_str()).collect();
        assert_eq!(&words[..2], &["buys", "buying"]);
        assert!(set.candidates[0].replacement_strategy == ReplacementStrategy::Local);

        // WordNet block follows (purchase scores highest), tagged global.
        let purchase = set
            .candidates
            .iter()
            .find(|c| c.word == "purchase")
            .unwrap();
        assert_eq!(purchase.source, CandidateSource::Wordnet);
        assert_eq!(purchase.replacement_strategy, ReplacementStrategy::Global);

        // The MLM's "purchase" was deduplicated into the earlier WordNet entry;
        // "sell" arrives with the MLM tag.
        assert_eq!(
            set.candidates
                .iter()
                .filter(|c| c.word == "purchase")
                .count(),
            1
        );
        let sell = set.candidates.iter().find(|c| c.word == "sell").unwrap();
        assert_eq!(sell.source, CandidateSource::Mlm);

        // Never the target word, embedding block precedes wordnet block
        // precedes mlm block.
        assert!(!words.contains(&"buy"));
        let first_wordnet = set
            .candidates
            .iter()
            .position(|c| c.source == CandidateSource::Wordnet)
            .unwrap();
        let last_embedding = set
            .candidates
            .iter()
            .rposition(|c| c.source == CandidateSource::Embedding)
            .unwrap();
        assert!(last_embedding < first_wordnet);
    }

    #[test]
    fn build_set_all_sources_empty() {
        let space = EmbeddingSpace::from_vectors(vec![("x".into(), vec![1.0, 0.0])]).unwrap();
        let wn = fixture_wordnet();
        let fx = FixtureMask(HashMap::new()); // mask source errors -> skipped
        let set = build_candidate_set(
            &space,
            &wn,
            &fx,
            "zzzqqq flerp",
            0,
            &CandidateParams::default(),
        )
        .unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn build_set_invalid_position() {
        let space = toy_space();
        let wn = fixture_wordnet();
        let fx = FixtureMask(HashMap::new());
        assert!(build_candidate_set(&space, &wn, &fx, "one two", 9, &CandidateParams::default())
            .is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn token_strategy() -> impl Strategy<Value = String> {
            proptest::string::string_regex("[a-zA-Z0-9_.,!#\u{7}\u{FF0C}-]{0,8}").unwrap()
        }

        proptest! {
            #[test]
            fn char_filter_is_subsequence_and_predicate_exact(
                tokens in proptest::collection::vec(token_strategy(), 0..40)
            ) {
                let kept = char_filter(&tokens);
                // subsequence
                let mut it = tokens.iter();
                for k in &kept {
                    prop_assert!(it.any(|t| t == k));
                }
                // survivors satisfy, rejected violate
                for t in &tokens {
                    let in_kept = kept.contains(t);
                    prop_assert_eq!(in_kept, passes_char_filter(t), "token {:?}", t);
                }
            }

            #[test]
            fn morphology_filter_is_subsequence_and_predicate_exact(
                original in "[a-zA-Z]{2,8}",
                tokens in proptest::collection::vec("[a-zA-Z_.]{1,10}", 0..40)
            ) {
                let kept = morphology_filter(&original, &tokens);
                let mut it = tokens.iter();
                for k in &kept {
                    prop_assert!(it.any(|t| t == k));
                }
                for t in &tokens {
                    prop_assert_eq!(
                        kept.contains(t),
                        passes_morphology_filter(&original, t),
                        "original {:?} token {:?}", &original, t
                    );
                }
                prop_assert!(!kept.iter().any(|t| t == &original));
            }
        }
    }
}
