//! Word-embedding storage and nearest-neighbor search.
//!
//! Two on-disk formats are supported:
//!
//! - text: first line `vocab_size dim`, then one line per token
//!   `token f1 ... fdim` (word2vec text convention);
//! - binary (`.bin`): little-endian `u32 vocab_size`, `u32 dim`, a token
//!   table of `u32 byte_len` + UTF-8 bytes per token, then `vocab_size * dim`
//!   row-major `f32` values.
//!
//! All vectors are unit-normalized at load time so cosine similarity is a
//! plain dot product.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// An immutable, unit-normalized embedding matrix with a token index.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    tokens: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    token_index: HashMap<String, usize>,
}

impl EmbeddingSpace {
    /// Build a space from raw (token, vector) pairs, normalizing every row.
    pub fn from_vectors(pairs: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Embedding("empty vocabulary".into()));
        }
        let dim = pairs[0].1.len();
        if dim == 0 {
            return Err(Error::Embedding("zero-dimensional vectors".into()));
        }
        let mut tokens = Vec::with_capacity(pairs.len());
        let mut vectors = Vec::with_capacity(pairs.len() * dim);
        let mut token_index = HashMap::with_capacity(pairs.len());
        for (row, (token, mut vec)) in pairs.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::Embedding(format!(
                    "token {token:?} has dim {} but the space has dim {dim}",
                    vec.len()
                )));
            }
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Embedding(format!(
                    "token {token:?} is empty or contains whitespace"
                )));
            }
            let norm = vec.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Embedding(format!(
                    "token {token:?} has a zero or non-finite vector"
                )));
            }
            for x in &mut vec {
                *x = (f64::from(*x) / norm) as f32;
            }
            if token_index.insert(token.clone(), row).is_some() {
                return Err(Error::Embedding(format!("duplicate token {token:?}")));
            }
            tokens.push(token);
            vectors.extend_from_slice(&vec);
        }
        Ok(Self {
            tokens,
            vectors,
            dim,
            token_index,
        })
    }

    /// Load from disk, choosing the format by extension (`.bin` = binary).
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::load_binary(path),
            _ => Self::load_text(path),
        }
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Embedding("empty embedding file".into()))??;
        let mut parts = header.split_whitespace();
        let vocab: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Embedding("bad header: expected \"vocab_size dim\"".into()))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Embedding("bad header: expected \"vocab_size dim\"".into()))?;

        let mut pairs = Vec::with_capacity(vocab);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let token = it
                .next()
                .ok_or_else(|| Error::Embedding(format!("line {}: missing token", i + 2)))?
                .to_string();
            let vec: Vec<f32> = it
                .map(|s| {
                    s.parse::<f32>()
                        .map_err(|e| Error::Embedding(format!("line {}: {e}", i + 2)))
                })
                .collect::<Result<_>>()?;
            if vec.len() != dim {
                return Err(Error::Embedding(format!(
                    "line {}: expected {dim} components, got {}",
                    i + 2,
                    vec.len()
                )));
            }
            pairs.push((token, vec));
        }
        if pairs.len() != vocab {
            return Err(Error::Embedding(format!(
                "header declares {vocab} tokens, file has {}",
                pairs.len()
            )));
        }
        Self::from_vectors(pairs)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let vocab = read_u32(&mut reader)? as usize;
        let dim = read_u32(&mut reader)? as usize;
        let mut tokens = Vec::with_capacity(vocab);
        for _ in 0..vocab {
            let len = read_u32(&mut reader)? as usize;
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf)?;
            let token = String::from_utf8(buf)
                .map_err(|e| Error::Embedding(format!("invalid UTF-8 token: {e}")))?;
            tokens.push(token);
        }
        let mut pairs = Vec::with_capacity(vocab);
        for token in tokens {
            let mut vec = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 4];
                reader.read_exact(&mut b)?;
                vec.push(f32::from_le_bytes(b));
            }
            pairs.push((token, vec));
        }
        Self::from_vectors(pairs)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_index.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_index.get(token).copied()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector_of(&self, token: &str) -> Option<&[f32]> {
        self.index_of(token).map(|i| self.row(i))
    }
}

/// Cosine similarity of two unit vectors: their dot product, accumulated in
/// f64. Errors on dimension mismatch.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum())
}

/// The `k` vocabulary tokens with the highest cosine similarity to `word`,
/// excluding `word` itself, sorted non-increasing by score with ties broken
/// by ascending vocabulary index. An out-of-vocabulary word yields an empty
/// list, which callers treat as "skip the embedding source".
pub fn embedding_neighbors(space: &EmbeddingSpace, word: &str, k: usize) -> Vec<(String, f64)> {
    let Some(word_idx) = space.index_of(word) else {
        return Vec::new();
    };
    let target = space.row(word_idx);
    let mut scored: Vec<(usize, f64)> = (0..space.len())
        .filter(|&i| i != word_idx)
        .map(|i| {
            let score = cosine_similarity(target, space.row(i)).expect("same-space dims");
            (i, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(i, score)| (space.tokens[i].clone(), score))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn toy_space() -> EmbeddingSpace {
        EmbeddingSpace::from_vectors(vec![
            ("a".into(), vec![1.0, 0.0, 0.0, 0.0]),
            ("b".into(), vec![0.9, 0.1, 0.0, 0.0]),
            ("c".into(), vec![0.0, 1.0, 0.0, 0.0]),
            ("d".into(), vec![0.0, 0.0, 1.0, 0.0]),
            ("e".into(), vec![-1.0, 0.0, 0.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn rows_are_unit_normalized() {
        let space = toy_space();
        for i in 0..space.len() {
            let norm: f64 = space.row(i).iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            assert!((norm.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let space = toy_space();
        let v = space.vector_of("a").unwrap();
        assert!((cosine_similarity(v, v).unwrap() - 1.0).abs() < 1e-9);
        let c = space.vector_of("c").unwrap();
        assert!(cosine_similarity(v, c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    /// Independent elementwise-product-and-sum oracle.
    fn cosine_oracle(a: &[f32], b: &[f32]) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..a.len() {
            acc += a[i] as f64 * b[i] as f64;
        }
        acc
    }

    #[test]
    fn cosine_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = cosine_similarity(&a, &b).unwrap();
            assert!((got - cosine_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    /// Brute-force full scan with the same tie-break, written independently.
    fn neighbors_oracle(space: &EmbeddingSpace, word: &str, k: usize) -> Vec<(String, f64)> {
        let Some(wi) = space.index_of(word) else {
            return Vec::new();
        };
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for i in 0..space.len() {
            if i == wi {
                continue;
            }
            rows.push((i, cosine_oracle(space.row(wi), space.row(i))));
        }
        // Selection sort by (score desc, index asc): deliberately different
        // machinery from the implementation's comparator sort.
        let mut out = Vec::new();
        let mut used = vec![false; rows.len()];
        for _ in 0..rows.len().min(k) {
            let mut best: Option<usize> = None;
            for (j, &(idx, score)) in rows.iter().enumerate() {
                if used[j] {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(bj) => {
                        let (bidx, bscore) = rows[bj];
                        if score > bscore || (score == bscore && idx < bidx) {
                            best = Some(j);
                        }
                    }
                }
            }
            let bj = best.unwrap();
            used[bj] = true;
            out.push((space.tokens()[rows[bj].0].clone(), rows[bj].1));
        }
        out
    }

    #[test]
    fn neighbors_match_brute_force_on_fixed_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pairs: Vec<(String, Vec<f32>)> = (0..5)
            .map(|i| {
                (
                    format!("w{i}"),
                    (0..4).map(|_| rng.gen_range(-1.0..1.0f32)).collect(),
                )
            })
            .collect();
        let space = EmbeddingSpace::from_vectors(pairs).unwrap();
        for k in [1, 3, 10] {
            let got = embedding_neighbors(&space, "w2", k);
            let want = neighbors_oracle(&space, "w2", k);
            assert_eq!(got, want, "k={k}");
        }
    }

    #[test]
    fn neighbors_tie_break_is_vocab_order() {
        // b and c are equidistant from a.
        let space = EmbeddingSpace::from_vectors(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![0.0, 1.0]),
            ("c".into(), vec![0.0, 1.0]),
        ])
        .unwrap();
        let got = embedding_neighbors(&space, "a", 2);
        assert_eq!(got[0].0, "b");
        assert_eq!(got[1].0, "c");
    }

    #[test]
    fn k_at_least_vocab_returns_all_others() {
        let space = toy_space();
        let got = embedding_neighbors(&space, "a", 100);
        assert_eq!(got.len(), space.len() - 1);
    }

    #[test]
    fn oov_word_yields_empty() {
        assert!(embedding_neighbors(&toy_space(), "zzz", 10).is_empty());
    }

    #[test]
    fn duplicate_token_rejected() {
        let err = EmbeddingSpace::from_vectors(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("a".into(), vec![0.0, 1.0]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingSpace::from_vectors(vec![("a".into(), vec![0.0, 0.0])]).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.vec");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "3 2").unwrap();
        writeln!(f, "alpha 1.0 0.0").unwrap();
        writeln!(f, "beta 0.6 0.8").unwrap();
        writeln!(f, "gamma 0.0 2.0").unwrap();
        drop(f);
        let space = EmbeddingSpace::load(&path).unwrap();
        assert_eq!(space.len(), 3);
        assert_eq!(space.dim(), 2);
        // gamma was scaled to unit length
        let g = space.vector_of("gamma").unwrap();
        assert!((g[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn text_format_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.vec");
        std::fs::write(&path, "5 2\nalpha 1.0 0.0\n").unwrap();
        assert!(EmbeddingSpace::load(&path).is_err());
    }

    #[test]
    fn binary_format_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for t in ["x", "yy"] {
            bytes.extend_from_slice(&(t.len() as u32).to_le_bytes());
            bytes.extend_from_slice(t.as_bytes());
        }
        for v in [[1.0f32, 0.0, 0.0], [0.0f32, 3.0, 4.0]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let space = EmbeddingSpace::load(&path).unwrap();
        assert_eq!(space.len(), 2);
        let y = space.vector_of("yy").unwrap();
        assert!((y[1] - 0.6).abs() < 1e-6);
        assert!((y[2] - 0.8).abs() < 1e-6);
    }
}
