use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window size and stride for over-long sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub size: usize,
    pub stride: usize,
    /// When false, sentences are truncated to `size` tokens instead.
    pub sliding: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            size: 512,
            stride: 256,
            sliding: true,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.size < self.stride {
            return Err(Error::Config(format!(
                "window requires size >= stride >= 1, got size {} stride {}",
                self.size, self.stride
            )));
        }
        Ok(())
    }

    pub fn chunks(&self, token_ids: &[u32]) -> Result<Vec<Chunk>> {
        if self.sliding {
            sliding_chunks(token_ids, self.size, self.stride)
        } else {
            self.validate()?;
            Ok(truncate_chunk(token_ids, self.size).into_iter().collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub token_ids: Vec<u32>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Windows `[s, min(s + window, len))` for `s = 0, stride, 2·stride, …`,
/// stopping at the first window that reaches the end.
pub fn sliding_chunks(token_ids: &[u32], window: usize, stride: usize) -> Result<Vec<Chunk>> {
    if stride == 0 || window < stride {
        return Err(Error::invalid(format!(
            "sliding window requires window >= stride >= 1, got {window}/{stride}"
        )));
    }
    let len = token_ids.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + window).min(len);
        out.push(Chunk {
            start,
            end,
            token_ids: token_ids[start..end].to_vec(),
        });
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// The single leading window used when sliding is disabled.
pub fn truncate_chunk(token_ids: &[u32], window: usize) -> Option<Chunk> {
    let end = token_ids.len().min(window);
    (end > 0).then(|| Chunk {
        start: 0,
        end,
        token_ids: token_ids[..end].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(len: usize) -> Vec<(usize, usize)> {
        let ids: Vec<u32> = (0..len as u32).collect();
        sliding_chunks(&ids, 512, 256)
            .unwrap()
            .iter()
            .map(|c| (c.start, c.end))
            .collect()
    }

    /// Steps the start by the stride until some window covers the tail.
    fn enumerate_oracle(len: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
        let mut out = vec![];
        if len == 0 {
            return out;
        }
        let mut s = 0;
        loop {
            out.push((s, usize::min(s + window, len)));
            if s + window >= len {
                return out;
            }
            s += stride;
        }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(spans(512), [(0, 512)]);
        assert_eq!(spans(600), [(0, 512), (256, 600)]);
        assert_eq!(spans(1100), [(0, 512), (256, 768), (512, 1024), (768, 1100)]);
        assert!(spans(0).is_empty());
        assert_eq!(spans(1), [(0, 1)]);
    }

    #[test]
    fn matches_enumeration_oracle() {
        for (w, s) in [(512, 256), (8, 3), (5, 5), (4, 1)] {
            for len in 0..200 {
                let ids: Vec<u32> = (0..len as u32).collect();
                let got: Vec<_> = sliding_chunks(&ids, w, s).unwrap().iter().map(|c| (c.start, c.end)).collect();
                assert_eq!(got, enumerate_oracle(len, w, s), "len {len} window {w} stride {s}");
            }
        }
    }

    #[test]
    fn token_ids_follow_offsets() {
        let ids: Vec<u32> = (100..700).collect();
        let chunks = sliding_chunks(&ids, 512, 256).unwrap();
        assert_eq!(chunks[1].token_ids, &ids[256..600]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(sliding_chunks(&[1, 2], 4, 0).is_err());
        assert!(sliding_chunks(&[1, 2], 2, 4).is_err());
    }

    #[test]
    fn truncation_mode() {
        let ids: Vec<u32> = (0..600).collect();
        let spec = WindowSpec { sliding: false, ..WindowSpec::default() };
        let chunks = spec.chunks(&ids).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].start, chunks[0].end), (0, 512));
        assert!(spec.chunks(&[]).unwrap().is_empty());
    }
}
