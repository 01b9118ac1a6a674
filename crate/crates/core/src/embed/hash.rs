use std::sync::atomic::{AtomicU64, Ordering};

use super::{check_len, EmbeddingMatrix, Embedder};
use crate::error::{Error, Result};
use crate::seed::splitmix64;

/// Deterministic unit vector for `(seed, token_id)`.
///
/// Component `c` comes from a counter-based generator keyed by
/// `(seed, token_id, c)`, mapped to uniform(−1, 1); the vector is then
/// L2-normalized.
pub fn hash_vector(token_id: u32, seed: u64, dim: usize) -> Vec<f32> {
    let key = splitmix64(splitmix64(seed) ^ u64::from(token_id));
    let raw: Vec<f64> = (0..dim as u64)
        .map(|c| {
            let bits = splitmix64(key ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
            ((bits >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut out = vec![0.0; dim];
        if let Some(first) = out.first_mut() {
            *first = 1.0;
        }
        return out;
    }
    raw.iter().map(|v| (v / norm) as f32).collect()
}

/// Reference embedder: each token maps to its hash vector; `[CLS]` and
/// document vectors are the mean of the token vectors.
#[derive(Debug)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
    max_len: usize,
    truncations: AtomicU64,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize, max_len: usize) -> Self {
        Self {
            seed,
            dim,
            max_len,
            truncations: AtomicU64::new(0),
        }
    }

    fn mean(&self, token_ids: &[u32]) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for &t in token_ids {
            for (a, v) in acc.iter_mut().zip(hash_vector(t, self.seed, self.dim)) {
                *a += f64::from(v);
            }
        }
        let n = token_ids.len() as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn embed_tokens(&self, token_ids: &[u32]) -> Result<EmbeddingMatrix> {
        check_len(token_ids.len(), self.max_len)?;
        let mut values = Vec::with_capacity(token_ids.len() * self.dim);
        for &t in token_ids {
            values.extend(hash_vector(t, self.seed, self.dim));
        }
        EmbeddingMatrix::new(token_ids.len(), self.dim, values)
    }

    fn embed_cls(&self, token_ids: &[u32]) -> Result<Vec<f32>> {
        check_len(token_ids.len(), self.max_len)?;
        if token_ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty chunk"));
        }
        Ok(self.mean(token_ids))
    }

    fn embed_document(&self, token_ids: &[u32]) -> Result<Vec<f32>> {
        if token_ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty document"));
        }
        let kept = if token_ids.len() > self.max_len {
            self.truncations.fetch_add(1, Ordering::Relaxed);
            &token_ids[..self.max_len]
        } else {
            token_ids
        };
        Ok(self.mean(kept))
    }

    fn truncations(&self) -> u64 {
        self.truncations.load(Ordering::Relaxed)
    }
}
