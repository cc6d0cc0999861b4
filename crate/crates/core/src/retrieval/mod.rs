//! Fuzzy key retrieval by embedding cosine similarity.
//!
//! A lookup call's `(entity, relation)` is rendered as `entity <|sep|> relation`,
//! embedded, and compared against every stored key. The best match is
//! accepted when its similarity reaches the threshold (0.6 by default),
//! otherwise the result is `Unknown`.

mod trigram;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markup::SEP;
use crate::store::{StoreKey, TripletStore};

pub use trigram::{fnv1a64, TrigramProvider, FNV_OFFSET_BASIS, FNV_PRIME, TRIGRAM_DIMENSION};

/// Default rejection threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("text cannot be embedded: {0:?}")]
    Unembeddable(String),
    #[error("threshold {0} outside [-1, 1]")]
    BadThreshold(String),
    #[error("provider returned dimension {got}, index expects {want}")]
    DimensionMismatch { got: usize, want: usize },
}

/// Identifies an embedding provider so clients can detect mismatches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub dimension: usize,
    pub version: String,
}

/// Deterministic text → unit vector mapping.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> ProviderInfo;

    /// L2-normalized embedding of `text`.
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scale `components` to unit length. The zero vector is rejected.
    pub fn normalized(mut components: Vec<f64>) -> Option<Self> {
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        components.iter_mut().for_each(|x| *x /= norm);
        Some(EmbeddingVector(components))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Canonical query string for a key.
pub fn render_query(key: &StoreKey) -> String {
    format!("{} {SEP} {}", key.entity, key.relation)
}

/// Inverse of [`render_query`].
pub fn split_query(text: &str) -> Option<StoreKey> {
    let (entity, relation) = text.split_once(SEP)?;
    let key = StoreKey::new(entity, relation);
    (!key.entity.is_empty() && !key.relation.is_empty()).then_some(key)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Hit { value: String, matched: StoreKey },
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub outcome: Outcome,
    /// Best cosine similarity found; `-inf` when nothing could be compared.
    pub similarity: f64,
    /// Set when the query text itself could not be embedded.
    pub unembeddable: bool,
}

impl RetrievalResult {
    pub fn is_hit(&self) -> bool {
        matches!(self.outcome, Outcome::Hit { .. })
    }

    pub fn value(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Hit { value, .. } => Some(value),
            Outcome::Unknown => None,
        }
    }

    fn unknown(similarity: f64) -> Self {
        RetrievalResult {
            outcome: Outcome::Unknown,
            similarity,
            unembeddable: false,
        }
    }
}

/// Exhaustive cosine index over the distinct keys of a store.
///
/// Vectors are stored contiguously in key-insertion order, so the first
/// maximum encountered is the key with the lowest insertion ordinal.
pub struct CosineIndex {
    provider: Box<dyn EmbeddingProvider>,
    dimension: usize,
    keys: Vec<StoreKey>,
    vectors: Vec<f64>,
    skipped: Vec<StoreKey>,
}

impl std::fmt::Debug for CosineIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineIndex")
            .field("provider", &self.provider.info())
            .field("keys", &self.keys.len())
            .field("skipped", &self.skipped.len())
            .finish()
    }
}

impl CosineIndex {
    /// Embed one vector per distinct key. Keys the provider cannot embed are
    /// skipped and listed in [`CosineIndex::skipped`].
    pub fn build(store: &TripletStore, provider: Box<dyn EmbeddingProvider>) -> Result<Self, RetrievalError> {
        let dimension = provider.info().dimension;
        let mut index = CosineIndex {
            provider,
            dimension,
            keys: Vec::with_capacity(store.len_keys()),
            vectors: Vec::with_capacity(store.len_keys() * dimension),
            skipped: Vec::new(),
        };
        for key in store.keys() {
            match index.provider.embed(&render_query(key)) {
                Ok(v) => {
                    if v.dimension() != dimension {
                        return Err(RetrievalError::DimensionMismatch {
                            got: v.dimension(),
                            want: dimension,
                        });
                    }
                    index.vectors.extend_from_slice(v.as_slice());
                    index.keys.push(key.clone());
                }
                Err(RetrievalError::Unembeddable(_)) => index.skipped.push(key.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(index)
    }

    pub fn with_trigrams(store: &TripletStore) -> Self {
        Self::build(store, Box::new(TrigramProvider)).expect("trigram provider has a fixed dimension")
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[StoreKey] {
        &self.keys
    }

    pub fn skipped(&self) -> &[StoreKey] {
        &self.skipped
    }

    pub fn provider_info(&self) -> ProviderInfo {
        self.provider.info()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.provider.embed(text)
    }

    /// Best `(position, similarity)` for a query vector.
    ///
    /// Only nonzero query components are visited, in ascending order; the
    /// skipped products are exact zeros, so the sums equal a full dense scan.
    pub fn nearest(&self, query: &EmbeddingVector) -> Option<(usize, f64)> {
        let support: Vec<(usize, f64)> = query
            .as_slice()
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, q)| *q != 0.0)
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.vectors.chunks_exact(self.dimension).enumerate() {
            let mut dot = 0.0;
            for &(j, q) in &support {
                dot += q * row[j];
            }
            if best.is_none_or(|(_, b)| dot > b) {
                best = Some((i, dot));
            }
        }
        best
    }

    /// Fuzzy lookup of `key` against the index, returning the store's
    /// majority value for the best-matching key when it clears `threshold`.
    pub fn retrieve(
        &self,
        store: &TripletStore,
        key: &StoreKey,
        threshold: f64,
    ) -> Result<RetrievalResult, RetrievalError> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(RetrievalError::BadThreshold(threshold.to_string()));
        }
        let query = match self.provider.embed(&render_query(key)) {
            Ok(q) => q,
            Err(RetrievalError::Unembeddable(_)) => {
                return Ok(RetrievalResult {
                    outcome: Outcome::Unknown,
                    similarity: f64::NEG_INFINITY,
                    unembeddable: true,
                })
            }
            Err(e) => return Err(e),
        };
        let Some((pos, similarity)) = self.nearest(&query) else {
            return Ok(RetrievalResult::unknown(f64::NEG_INFINITY));
        };
        if similarity < threshold {
            return Ok(RetrievalResult::unknown(similarity));
        }
        let matched = &self.keys[pos];
        Ok(match store.lookup_exact(matched) {
            Some(value) => RetrievalResult {
                outcome: Outcome::Hit {
                    value: value.to_owned(),
                    matched: matched.clone(),
                },
                similarity,
                unembeddable: false,
            },
            // Index built from an older store state.
            None => RetrievalResult::unknown(similarity),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markup::Triplet;

    fn store(keys: &[(&str, &str, &str)]) -> TripletStore {
        let mut s = TripletStore::new();
        for (e, r, v) in keys {
            s.ingest(&[Triplet::new(e, r, v)], "d");
        }
        s
    }

    #[test]
    fn render_and_split() {
        let k = StoreKey::new("Napoleon", "Birth_Date");
        assert_eq!(render_query(&k), "Napoleon <|sep|> Birth_Date");
        assert_eq!(
            render_query(&StoreKey::new(" Napoleon  ", "Birth_Date ")),
            render_query(&k)
        );
        assert_eq!(split_query(&render_query(&k)), Some(k));
        assert_eq!(split_query("no separator"), None);
    }

    #[test]
    fn empty_index_is_unknown() {
        let s = TripletStore::new();
        let idx = CosineIndex::with_trigrams(&s);
        assert!(idx.is_empty());
        let r = idx.retrieve(&s, &StoreKey::new("a", "b"), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.outcome, Outcome::Unknown);
        assert_eq!(r.similarity, f64::NEG_INFINITY);
    }

    #[test]
    fn one_vector_per_key() {
        let s = store(&[("A", "r", "v"), ("A", "r", "v"), ("A", "r", "w")]);
        assert_eq!(CosineIndex::with_trigrams(&s).len(), 1);
    }

    #[test]
    fn self_retrieval() {
        let s = store(&[("Napoleon", "Birth_Date", "August 15, 1769"), ("Ada", "born", "1815")]);
        let idx = CosineIndex::with_trigrams(&s);
        let r = idx
            .retrieve(&s, &StoreKey::new("Napoleon", "Birth_Date"), DEFAULT_THRESHOLD)
            .unwrap();
        assert_eq!(r.value(), Some("August 15, 1769"));
        assert!((r.similarity - 1.0).abs() < 1e-9);
        let strict = idx.retrieve(&s, &StoreKey::new("Ada", "born"), 1.0 - 1e-6).unwrap();
        assert!(strict.is_hit());
    }

    #[test]
    fn threshold_equality_accepts() {
        let s = store(&[("Napoleon", "Birth_Date", "x")]);
        let idx = CosineIndex::with_trigrams(&s);
        let q = StoreKey::new("Napolean", "Birth Date");
        let sim = idx.retrieve(&s, &q, -1.0).unwrap().similarity;
        assert!(idx.retrieve(&s, &q, sim).unwrap().is_hit());
        assert!(sim < 0.999);
        assert!(!idx.retrieve(&s, &q, sim + 1e-9).unwrap().is_hit());
    }

    #[test]
    fn bad_threshold() {
        let s = TripletStore::new();
        let idx = CosineIndex::with_trigrams(&s);
        assert!(idx.retrieve(&s, &StoreKey::new("a", "b"), 1.5).is_err());
    }

    #[test]
    fn case_variants_tie_to_earliest_key() {
        let s = store(&[("paris", "capital of", "first"), ("Paris", "Capital Of", "second")]);
        let idx = CosineIndex::with_trigrams(&s);
        let r = idx
            .retrieve(&s, &StoreKey::new("PARIS", "capital of"), DEFAULT_THRESHOLD)
            .unwrap();
        assert_eq!(r.value(), Some("first"));
    }
}
