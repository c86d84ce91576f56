//! Deterministic reference scorers used when no external model is configured.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Embedder, Judger, ScorerError};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

/// Hashed character-trigram term frequencies, folded into `dim` buckets and
/// L2-normalised.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Embedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ScorerError> {
        let chars = normalise(text);
        if chars.len() <= 2 {
            return Err(ScorerError::new("cannot embed empty text"));
        }
        let mut tf = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for gram in chars.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let bucket = (fnv1a(&buf[..len]) % self.dim as u64) as usize;
            tf[bucket] += 1.0;
        }
        let norm = libm::sqrtf(tf.iter().map(|x| x * x).sum());
        for x in &mut tf {
            *x /= norm;
        }
        Ok(tf)
    }
}

/// Lowercased, whitespace-collapsed and padded with one space on each side.
fn normalise(text: &str) -> Vec<char> {
    let mut out = vec![' '];
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if out.last() != Some(&' ') {
                out.push(' ');
            }
        } else {
            out.push(c);
        }
    }
    if out.last() != Some(&' ') {
        out.push(' ');
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Token-level Jaccard similarity between the candidate's query and the new
/// query. Ignores the cached answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardJudge;

impl Judger for JaccardJudge {
    fn score(
        &self,
        candidate_query: &str,
        _candidate_answer: &str,
        new_query: &str,
    ) -> Result<f64, ScorerError> {
        Ok(jaccard(candidate_query, new_query))
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// |A ∩ B| / |A ∪ B| over [`tokens`]; 0 when both sides have no tokens.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semcache::index::dot;

    #[test]
    fn embedding_is_deterministic_unit_norm() {
        let e = TrigramEmbedder::default();
        let a = e.embed("Failure modes of Chiller 6").unwrap();
        let b = e.embed("Failure modes of Chiller 6").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        assert!((dot(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn whitespace_and_case_do_not_matter() {
        let e = TrigramEmbedder::default();
        assert_eq!(e.embed("Chiller  6\tload").unwrap(), e.embed("chiller 6 LOAD").unwrap());
    }

    #[test]
    fn short_and_empty_text() {
        let e = TrigramEmbedder::new(16);
        assert!(e.embed("").is_err());
        assert!(e.embed("   ").is_err());
        assert!(e.embed("a").is_ok());
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard("a b c", "a b c"), 1.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        assert_eq!(jaccard("a b c", "a b d"), 0.5);
        assert_eq!(jaccard("Chiller-6, LOAD", "load chiller 6"), 1.0);
        assert_eq!(jaccard("!!", "??"), 0.0);
    }
}
