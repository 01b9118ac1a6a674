//! Binary embedding cache.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "NEM1" | version u32 = 1 | dim u32 | count u64
//! count × ( key_len u16 | key UTF-8 bytes | dim × f32 )
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::check_finite;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"NEM1";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Builds a cache from a map whose vectors must share one dimension.
    pub fn from_map(entries: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let dim = entries.values().next().map_or(0, Vec::len);
        let mut cache = Self::new(dim);
        for (k, v) in entries {
            cache.insert(k, v)?;
        }
        Ok(cache)
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

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: String, vector: Vec<f32>) -> Result<()> {
        if self.entries.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                left: vector.len(),
                right: self.dim,
            });
        }
        if key.len() > usize::from(u16::MAX) {
            return Err(Error::invalid(format!("cache key of {} bytes is too long", key.len())));
        }
        check_finite(&vector, "cache entry")?;
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<f32>> {
        &self.entries
    }

    pub fn into_map(self) -> BTreeMap<String, Vec<f32>> {
        self.entries
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (8 + 4 * self.dim));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, vector) in &self.entries {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Format("bad embedding cache magic".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported embedding cache version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let key_len = usize::from(r.u16()?);
            let key = std::str::from_utf8(r.take(key_len)?)
                .map_err(|e| Error::Format(format!("cache key is not UTF-8: {e}")))?
                .to_string();
            let raw = r.take(4 * dim)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            check_finite(&vector, "cache file")?;
            if entries.insert(key.clone(), vector).is_some() {
                return Err(Error::Format(format!("duplicate cache key {key:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after cache records", bytes.len() - r.pos)));
        }
        Ok(Self { dim, entries })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.encode())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("embedding cache truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cache(n: usize, dim: usize) -> EmbeddingCache {
        let mut rng = crate::seed::rng(3);
        let mut c = EmbeddingCache::new(dim);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
            c.insert(format!("note{i}:0:{}", i * 256), v).unwrap();
        }
        c
    }

    #[test]
    fn thousand_vectors_round_trip_bitwise() {
        let c = random_cache(1000, 24);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.nem");
        c.write(&path).unwrap();
        let back = EmbeddingCache::read(&path).unwrap();
        assert_eq!(back.len(), 1000);
        for (k, v) in c.entries() {
            let w = back.get(k).unwrap();
            assert!(v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn empty_cache_is_valid() {
        let bytes = EmbeddingCache::new(0).encode();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"NEM1");
        let back = EmbeddingCache::decode(&bytes).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn header_layout() {
        let mut c = EmbeddingCache::new(2);
        c.insert("ab".into(), vec![1.0, -2.0]).unwrap();
        let b = c.encode();
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &1u64.to_le_bytes());
        assert_eq!(&b[20..22], &2u16.to_le_bytes());
        assert_eq!(&b[22..24], b"ab");
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let good = random_cache(3, 4).encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingCache::decode(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(EmbeddingCache::decode(&bad).is_err());
        assert!(EmbeddingCache::decode(&good[..good.len() - 1]).is_err());
        assert!(EmbeddingCache::decode(&good[..10]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(EmbeddingCache::decode(&extra).is_err());
    }

    #[test]
    fn dims_must_agree() {
        let mut c = EmbeddingCache::new(0);
        c.insert("a".into(), vec![1.0, 2.0]).unwrap();
        assert!(c.insert("b".into(), vec![1.0]).is_err());
        assert!(c.insert("c".into(), vec![f32::NAN, 0.0]).is_err());
    }
}
