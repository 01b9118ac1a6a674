//! The aggregation algebra: token → sentence, sentence/chunk → note and
//! note → patient pooling with `avg`, `max` and `mean_max`.
//!
//! `mean_max` concatenates the element-wise mean and the element-wise
//! maximum, so every `mean_max` stage doubles the dimension:
//!
//! ```text
//! R = [ mean(r_1, …, r_m) ⊕ max(r_1, …, r_m) ]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, EmbeddingMatrix, Granularity};
use crate::error::{Error, Result};
use crate::textproc::Chunk;

const ATTENTION_UNSUPPORTED: &str =
    "attention aggregation (\"att\") needs a trained hierarchical attention network and is not supported; use avg, max or mean_max";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Pooling {
    Avg,
    Max,
    MeanMax,
}

impl Pooling {
    pub const ALL: [Pooling; 3] = [Pooling::Avg, Pooling::Max, Pooling::MeanMax];

    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Avg => "avg",
            Pooling::Max => "max",
            Pooling::MeanMax => "mean_max",
        }
    }

    pub fn factor(self) -> usize {
        if self == Pooling::MeanMax {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "mean" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            "mean_max" => Ok(Pooling::MeanMax),
            "att" => Err(Error::Config(ATTENTION_UNSUPPORTED.into())),
            other => Err(Error::Config(format!("unknown pooling strategy {other:?}"))),
        }
    }
}

impl TryFrom<String> for Pooling {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Pooling> for String {
    fn from(p: Pooling) -> String {
        p.as_str().to_string()
    }
}

/// Token-level strategy: a pooling over token rows, or the chunk's `[CLS]`
/// vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TokenPooling {
    Pool(Pooling),
    Cls,
}

impl TokenPooling {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenPooling::Pool(p) => p.as_str(),
            TokenPooling::Cls => "cls",
        }
    }

    pub fn factor(self) -> usize {
        match self {
            TokenPooling::Pool(p) => p.factor(),
            TokenPooling::Cls => 1,
        }
    }
}

impl FromStr for TokenPooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cls" {
            Ok(TokenPooling::Cls)
        } else {
            s.parse().map(TokenPooling::Pool)
        }
    }
}

impl TryFrom<String> for TokenPooling {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TokenPooling> for String {
    fn from(p: TokenPooling) -> String {
        p.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingSpec {
    pub token_level: TokenPooling,
    pub note_level: Pooling,
    pub patient_level: Pooling,
}

impl PoolingSpec {
    /// The same strategy at every level, with `[CLS]` vectors at the token
    /// level when the embedder works at that granularity.
    pub fn uniform(p: Pooling, granularity: Granularity) -> Self {
        Self {
            token_level: if granularity == Granularity::Cls {
                TokenPooling::Cls
            } else {
                TokenPooling::Pool(p)
            },
            note_level: p,
            patient_level: p,
        }
    }

    pub fn validate(&self, granularity: Granularity) -> Result<()> {
        match (granularity, self.token_level) {
            (Granularity::Cls, TokenPooling::Pool(_)) => Err(Error::Config(
                "a cls-granularity embedder requires token_level = cls".into(),
            )),
            (Granularity::Token, TokenPooling::Cls) => Err(Error::Config(
                "token_level = cls requires a cls-granularity embedder".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Short name used in reports: the strategy when uniform, else all three.
    pub fn label(&self, granularity: Granularity) -> String {
        let uniform_token = match (granularity, self.token_level) {
            (Granularity::Document, _) | (Granularity::Cls, TokenPooling::Cls) => true,
            (_, TokenPooling::Pool(p)) => p == self.note_level,
            _ => false,
        };
        if granularity == Granularity::Document {
            return self.patient_level.as_str().to_string();
        }
        if uniform_token && self.note_level == self.patient_level {
            self.patient_level.as_str().to_string()
        } else {
            format!("{}/{}/{}", self.token_level.as_str(), self.note_level, self.patient_level)
        }
    }

    /// Dimension of the patient representation for a base embedding dim.
    /// Document-granularity embedders skip the token and note levels.
    pub fn patient_dim(&self, base: usize, granularity: Granularity) -> usize {
        match granularity {
            Granularity::Document => base * self.patient_level.factor(),
            _ => base * self.token_level.factor() * self.note_level.factor() * self.patient_level.factor(),
        }
    }
}

/// Pools the rows of a matrix. Accepts single or double precision rows.
pub fn pool<R, T>(rows: &[R], strategy: Pooling) -> Result<Vec<f64>>
where
    R: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    let first = rows.first().ok_or(Error::EmptyAggregation("pooling over zero rows"))?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0f64; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for row in rows {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimMismatch { left: row.len(), right: dim });
        }
        for ((s, m), &v) in sum.iter_mut().zip(max.iter_mut()).zip(row) {
            let v: f64 = v.into();
            *s += v;
            if v > *m {
                *m = v;
            }
        }
    }
    let n = rows.len() as f64;
    let mean = sum.into_iter().map(|s| s / n);
    Ok(match strategy {
        Pooling::Avg => mean.collect(),
        Pooling::Max => max,
        Pooling::MeanMax => mean.chain(max).collect(),
    })
}

pub fn pool_matrix(matrix: &EmbeddingMatrix, strategy: Pooling) -> Result<Vec<f64>> {
    let rows: Vec<&[f32]> = matrix.iter_rows().collect();
    pool(&rows, strategy)
}

/// One vector per chunk: token rows pooled with the token-level strategy, or
/// the chunk's `[CLS]` vector. Values are rounded to 32 bits, the precision
/// the embedding cache stores.
pub fn chunk_vectors(chunks: &[Chunk], embedder: &dyn Embedder, token_level: TokenPooling) -> Result<Vec<Vec<f32>>> {
    chunks
        .iter()
        .map(|chunk| match token_level {
            TokenPooling::Cls => embedder.embed_cls(&chunk.token_ids),
            TokenPooling::Pool(p) => {
                let m = embedder.embed_tokens(&chunk.token_ids)?;
                Ok(pool_matrix(&m, p)?.into_iter().map(|v| v as f32).collect())
            }
        })
        .collect()
}

/// A single vector for one sentence: its chunk vectors averaged. The note
/// pipeline does not use this; it hands every chunk vector to note pooling.
pub fn sentence_repr(chunks: &[Chunk], embedder: &dyn Embedder, token_level: TokenPooling) -> Result<Vec<f64>> {
    if chunks.is_empty() {
        return Err(Error::EmptyAggregation("sentence without chunks"));
    }
    pool(&chunk_vectors(chunks, embedder, token_level)?, Pooling::Avg)
}

/// Pools the flattened sentence/chunk vectors of one note.
pub fn note_repr<R, T>(vectors: &[R], note_level: Pooling) -> Result<Vec<f64>>
where
    R: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    if vectors.is_empty() {
        return Err(Error::EmptyAggregation("note without sentences"));
    }
    pool(vectors, note_level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRepresentation {
    pub patient_id: String,
    pub vector: Vec<f64>,
}

impl PatientRepresentation {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

pub fn patient_repr<R: AsRef<[f64]>>(
    patient_id: &str,
    note_vectors: &[R],
    patient_level: Pooling,
) -> Result<PatientRepresentation> {
    if note_vectors.is_empty() {
        return Err(Error::EmptyAggregation("patient without notes"));
    }
    Ok(PatientRepresentation {
        patient_id: patient_id.to_string(),
        vector: pool(note_vectors, patient_level)?,
    })
}

/// Applies patient-level pooling to the singleton `{x2}` so the target note
/// lives in the same space as the patient representation.
pub fn lift_target(x2: &[f64], patient_level: Pooling) -> Vec<f64> {
    match patient_level {
        Pooling::MeanMax => x2.iter().chain(x2).copied().collect(),
        _ => x2.to_vec(),
    }
}
