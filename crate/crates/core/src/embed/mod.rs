//! Embedding backends.
//!
//! [`Embedder`] maps token id sequences to vectors at three granularities:
//! one row per token, a single `[CLS]`-style vector per chunk, or one vector
//! per document. Two implementations ship here ([`HashEmbedder`] and
//! [`SidecarClient`]); precomputed vectors live in an [`EmbeddingCache`].

mod cache;
mod hash;
mod sidecar;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub use hash::{hash_vector, HashEmbedder};
pub use sidecar::{EmbedResult, Endpoint, Handshake, SidecarClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Cache,
    Sidecar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Token,
    Cls,
    Document,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Token => "token",
            Granularity::Cls => "cls",
            Granularity::Document => "document",
        }
    }

    pub fn default_max_len(self) -> usize {
        match self {
            Granularity::Document => 4096,
            _ => 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub granularity: Granularity,
    #[serde(default)]
    pub max_len: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Sidecar endpoint, `tcp://host:port` or `stdio:<command line>`.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Cache file for the `cache` kind.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl EmbedderSpec {
    pub fn hash(dim: usize, granularity: Granularity, seed: u64) -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim,
            granularity,
            max_len: None,
            seed,
            endpoint: None,
            path: None,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len.unwrap_or_else(|| self.granularity.default_max_len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedder dim must be >= 1".into()));
        }
        if self.max_len() == 0 {
            return Err(Error::Config("embedder max_len must be >= 1".into()));
        }
        if self.granularity != Granularity::Document && self.max_len() > 512 {
            return Err(Error::Config(format!(
                "max_len {} exceeds 512 for {} granularity",
                self.max_len(),
                self.granularity.as_str()
            )));
        }
        match self.kind {
            EmbedderKind::Cache if self.path.is_none() => Err(Error::Config("cache embedder needs a path".into())),
            EmbedderKind::Sidecar if self.endpoint.is_none() => {
                Err(Error::Config("sidecar embedder needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Row-major `rows × dim` matrix of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::DimMismatch {
                left: values.len(),
                right: rows * dim,
            });
        }
        check_finite(&values, "embedding matrix")?;
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>], dim: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimMismatch { left: r.len(), right: dim });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

pub(crate) fn check_finite(values: &[f32], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn max_len(&self) -> usize;

    /// One row per token. Inputs longer than `max_len` are rejected.
    fn embed_tokens(&self, token_ids: &[u32]) -> Result<EmbeddingMatrix>;

    /// The sequence-level `[CLS]` vector of one chunk.
    fn embed_cls(&self, token_ids: &[u32]) -> Result<Vec<f32>>;

    /// One vector for a whole note; tokens beyond `max_len` are dropped and
    /// counted in [`Embedder::truncations`].
    fn embed_document(&self, token_ids: &[u32]) -> Result<Vec<f32>>;

    fn truncations(&self) -> u64;
}

pub(crate) fn check_len(len: usize, max_len: usize) -> Result<()> {
    if len > max_len {
        Err(Error::invalid(format!(
            "{len} tokens exceed the embedder limit of {max_len}; chunk first"
        )))
    } else {
        Ok(())
    }
}

/// Opens a token-id embedder for the given spec. The `cache` kind has no
/// embedder and yields `None`.
pub fn open(spec: &EmbedderSpec, vocab_digest: Option<&str>) -> Result<Option<Box<dyn Embedder>>> {
    spec.validate()?;
    Ok(match spec.kind {
        EmbedderKind::Hash => Some(Box::new(HashEmbedder::new(spec.seed, spec.dim, spec.max_len()))),
        EmbedderKind::Cache => None,
        EmbedderKind::Sidecar => {
            let endpoint = Endpoint::parse(spec.endpoint.as_deref().unwrap_or_default())?;
            let client = SidecarClient::connect(&endpoint, 3, vocab_digest)?;
            if client.handshake().dim != spec.dim {
                return Err(Error::Config(format!(
                    "sidecar serves dim {} but the configuration asks for {}",
                    client.handshake().dim,
                    spec.dim
                )));
            }
            Some(Box::new(client))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_shape_checks() {
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![0.0, f32::NAN]).is_err());
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(EmbeddingMatrix::new(0, 4, vec![]).unwrap().rows(), 0);
    }

    #[test]
    fn spec_validation() {
        let mut s = EmbedderSpec::hash(0, Granularity::Token, 1);
        assert!(s.validate().is_err());
        s.dim = 8;
        s.validate().unwrap();
        s.max_len = Some(1024);
        assert!(s.validate().is_err());
        s.granularity = Granularity::Document;
        s.validate().unwrap();
        assert_eq!(EmbedderSpec::hash(8, Granularity::Document, 0).max_len(), 4096);
        let cache = EmbedderSpec { kind: EmbedderKind::Cache, ..EmbedderSpec::hash(8, Granularity::Token, 0) };
        assert!(cache.validate().is_err());
    }
}
