//! Episodic vector memory for the protagonist: append-only records with
//! exact brute-force top-k retrieval by cosine similarity.
//!
//! Episodes are short (≤ ~10 rounds), so the store stays tiny; exact scan
//! beats any approximate index on determinism and is plenty fast.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MemoryError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("record text must be non-empty")]
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    /// Simulation round the record was formed in (1-based).
    pub round: u32,
    /// Character id (or `environment`) that authored the text.
    pub author: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Append-only store; all embeddings share one dimensionality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
    dim: usize,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        MemoryStore { records: Vec::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn append(&mut self, record: MemoryRecord) -> Result<(), MemoryError> {
        if record.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if record.embedding.len() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                left: record.embedding.len(),
                right: self.dim,
            });
        }
        self.records.push(record);
        Ok(())
    }
}

/// dot(a,b) / (‖a‖·‖b‖), in [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MemoryError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MemoryError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Top-`k` records by similarity to `query`, descending; ties broken by
/// lower round index so older memories win and retrieval stays stable.
pub fn retrieve(
    store: &MemoryStore,
    query: &[f64],
    k: usize,
) -> Result<Vec<MemoryRecord>, MemoryError> {
    if query.len() != store.dim {
        return Err(MemoryError::DimensionMismatch { left: query.len(), right: store.dim });
    }
    if k == 0 || store.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(f64, &MemoryRecord)> = store
        .records
        .iter()
        .map(|r| Ok((cosine_similarity(&r.embedding, query)?, r)))
        .collect::<Result<_, MemoryError>>()?;
    scored.sort_by(|(sa, ra), (sb, rb)| {
        sb.partial_cmp(sa)
            .expect("similarities are finite")
            .then(ra.round.cmp(&rb.round))
    });
    Ok(scored.into_iter().take(k).map(|(_, r)| r.clone()).collect())
}
