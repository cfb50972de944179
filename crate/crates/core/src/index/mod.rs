//! Exact cosine k-nearest-neighbour retrieval over captioned image
//! embeddings.
//!
//! Vectors are L2-normalized once at insert time so cosine similarity
//! reduces to a dot product at query time. Retrieval is an exact full
//! scan — no approximation — which keeps results reproducible and lets a
//! brute-force oracle check the implementation entry for entry. The index
//! is append-only while building; queries take `&self`, so a built index
//! can be shared across threads and concurrent queries see identical
//! results.

mod persist;

pub use persist::{load_entries_jsonl, write_entries_jsonl};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive bounds on the embedding dimensionality.
pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector norm is zero (or below 1e-12); cannot normalize")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("invalid dimension {0}: must be within [{MIN_DIM}, {MAX_DIM}]")]
    InvalidDim(usize),
    #[error("dimension mismatch: index holds {expected}-dim vectors, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate entry id {0}")]
    DuplicateId(u64),
    #[error("index is empty")]
    EmptyIndex,
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("malformed sidecar entry: {0}")]
    SchemaViolation(String),
}

/// One captioned reference embedding. `vector` is raw on input to
/// [`EmbeddingIndex::add_entry`] and stored normalized thereafter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub entry_id: u64,
    pub vector: Vec<f32>,
    pub caption: String,
    pub entity_id: String,
    pub image_uri: String,
    pub source_uri: String,
}

/// One retrieval hit: cosine score plus the entry's identifying fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub entry_id: u64,
    pub score: f32,
    pub entity_id: String,
    pub caption: String,
}

/// Hits ordered by descending score, ties broken by ascending entry id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    hits: Vec<SimilarityHit>,
}

impl RetrievalSet {
    /// Build a set from arbitrary-order hits, establishing the canonical
    /// order (score descending, then entry id ascending).
    pub fn from_hits(mut hits: Vec<SimilarityHit>) -> Self {
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("similarity scores are finite")
                .then(a.entry_id.cmp(&b.entry_id))
        });
        RetrievalSet { hits }
    }

    pub fn hits(&self) -> &[SimilarityHit] {
        &self.hits
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// L2-normalize in f64 and round back to f32. The result's norm lands
/// within 1e-6 of 1. Rejects non-finite components and norms below 1e-12.
pub fn normalize(values: &[f32]) -> Result<Vec<f32>, IndexError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IndexError::NonFinite);
    }
    let norm = values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm < 1e-12 {
        return Err(IndexError::ZeroVector);
    }
    Ok(values
        .iter()
        .map(|&v| (f64::from(v) / norm) as f32)
        .collect())
}

/// Append-only exact cosine index with a fixed dimensionality.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if !(MIN_DIM..=MAX_DIM).contains(&dim) {
            return Err(IndexError::InvalidDim(dim));
        }
        Ok(EmbeddingIndex {
            dim,
            entries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored entries (vectors normalized), in insertion order.
    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Normalize and insert. Rejects wrong dimensionality, duplicate ids,
    /// zero vectors, and non-finite components.
    pub fn add_entry(&mut self, mut entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: entry.vector.len(),
            });
        }
        if self.entries.iter().any(|e| e.entry_id == entry.entry_id) {
            return Err(IndexError::DuplicateId(entry.entry_id));
        }
        entry.vector = normalize(&entry.vector)?;
        self.entries.push(entry);
        Ok(())
    }

    /// Insert a vector that is already normalized (persistence reload).
    /// Skips renormalization so a round trip is bit-exact.
    pub(crate) fn insert_normalized(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: entry.vector.len(),
            });
        }
        if self.entries.iter().any(|e| e.entry_id == entry.entry_id) {
            return Err(IndexError::DuplicateId(entry.entry_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Exact k-nearest-neighbours by cosine similarity.
    ///
    /// The query is normalized here, so `knn(q)` and `knn(c·q)` agree for
    /// any scale `c > 0`. Scores are non-increasing with ties broken by
    /// ascending entry id; `k` larger than the index returns everything,
    /// `k = 0` returns an empty set.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<RetrievalSet, IndexError> {
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = normalize(query)?;
        let mut hits: Vec<SimilarityHit> = self
            .entries
            .iter()
            .map(|e| SimilarityHit {
                entry_id: e.entry_id,
                score: dot(&e.vector, &q),
                entity_id: e.entity_id.clone(),
                caption: e.caption.clone(),
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("similarity scores are finite")
                .then(a.entry_id.cmp(&b.entry_id))
        });
        hits.truncate(k);
        Ok(RetrievalSet { hits })
    }

    /// Write the index to `path` in the binary format (see [`persist`]).
    pub fn save(&self, path: &std::path::Path) -> Result<(), IndexError> {
        persist::save_index(self, path)
    }

    /// Load an index previously written by [`EmbeddingIndex::save`].
    pub fn load(path: &std::path::Path) -> Result<Self, IndexError> {
        persist::load_index(path)
    }
}

/// Dot product accumulated in f64, rounded to f32 once.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>() as f32
}
