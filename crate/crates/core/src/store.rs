//! Exhaustive cosine-similarity vector index with a checksummed file format.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 8    | magic `GRAGIDX\0`                             |
//! | 8      | 4    | format version (`1`)                          |
//! | 12     | 4    | dim                                           |
//! | 16     | 8    | entry count                                   |
//! | 24     | 8    | metadata section length in bytes              |
//! | 32     | 32   | SHA-256 of everything after the header        |
//! | 64     | ...  | `count * dim` f64 vector records, entry order |
//! | ...    | ...  | metadata section: JSON array of id/text/meta  |
//!
//! Floats are stored as raw bits, so a load reproduces every score exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{cosine_from_parts, dot, EmbeddingError, EmbeddingVector};

pub const MAGIC: [u8; 8] = *b"GRAGIDX\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("chunk id '{0}' is already indexed")]
    DuplicateId(String),
    #[error("dimension mismatch: index holds {expected}-dim vectors, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector for '{0}' has zero norm")]
    ZeroNorm(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index checksum mismatch: file is corrupt or truncated")]
    Checksum,
    #[error("corrupt index: {0}")]
    Corrupt(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Descending score, then ascending id.
pub fn hit_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// In-memory index. Searches take `&self` and may run from many threads at
/// once; adds take `&mut self`.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: Option<usize>,
    entries: Vec<IndexEntry>,
    norms2: Vec<f64>,
    positions: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    chunk_id: String,
    text: String,
    metadata: BTreeMap<String, String>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty index that only accepts `dim`-dimensional vectors.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.positions.get(chunk_id).map(|&i| &self.entries[i])
    }

    /// Adds all entries or none, returning the new size.
    pub fn add(&mut self, entries: Vec<IndexEntry>) -> Result<usize> {
        let mut dim = self.dim;
        let mut batch_ids = HashMap::new();
        let mut norms = Vec::with_capacity(entries.len());
        for entry in &entries {
            let found = entry.vector.dim();
            match dim {
                Some(expected) if expected != found => {
                    return Err(StoreError::DimensionMismatch { expected, found })
                }
                _ => dim = Some(found),
            }
            if self.positions.contains_key(&entry.chunk_id)
                || batch_ids.insert(entry.chunk_id.as_str(), ()).is_some()
            {
                return Err(StoreError::DuplicateId(entry.chunk_id.clone()));
            }
            let n2 = entry.vector.norm_squared();
            if n2 == 0.0 {
                return Err(StoreError::ZeroNorm(entry.chunk_id.clone()));
            }
            norms.push(n2);
        }
        self.dim = dim;
        for (entry, n2) in entries.into_iter().zip(norms) {
            self.positions.insert(entry.chunk_id.clone(), self.entries.len());
            self.entries.push(entry);
            self.norms2.push(n2);
        }
        Ok(self.entries.len())
    }

    /// The `k` entries most cosine-similar to `query` (fewer if the index is
    /// smaller). An empty index yields no hits.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.dim.expect("non-empty index has a dim");
        if query.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                found: query.dim(),
            });
        }
        let q2 = query.norm_squared();
        if q2 == 0.0 {
            return Err(StoreError::ZeroQuery);
        }

        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .zip(&self.norms2)
            .enumerate()
            .map(|(i, (e, &n2))| (cosine_from_parts(dot(query.values(), e.vector.values()), q2, n2), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            hit_order(
                (a.0, &self.entries[a.1].chunk_id),
                (b.0, &self.entries[b.1].chunk_id),
            )
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| SearchHit {
                chunk_id: self.entries[i].chunk_id.clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim.unwrap_or(0);
        let meta: Vec<EntryMeta> = self
            .entries
            .iter()
            .map(|e| EntryMeta {
                chunk_id: e.chunk_id.clone(),
                text: e.text.clone(),
                metadata: e.metadata.clone(),
            })
            .collect();
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");

        let mut body = Vec::with_capacity(self.entries.len() * dim * 8 + meta.len());
        for e in &self.entries {
            for v in e.vector.values() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        body.extend_from_slice(&meta);

        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&body));
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || bytes[..8] != MAGIC {
            return Err(if bytes.len() < 8 {
                StoreError::Corrupt("file shorter than header".into())
            } else {
                StoreError::BadMagic
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Corrupt("file shorter than header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dim = u32_at(12) as usize;
        let count = u64_at(16) as usize;
        let meta_len = u64_at(24) as usize;
        let body = &bytes[HEADER_LEN..];
        if Sha256::digest(body).as_slice() != &bytes[32..64] {
            return Err(StoreError::Checksum);
        }
        let vec_bytes = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| StoreError::Corrupt("entry count overflows".into()))?;
        if body.len() != vec_bytes + meta_len {
            return Err(StoreError::Corrupt(format!(
                "body is {} bytes, header implies {}",
                body.len(),
                vec_bytes + meta_len
            )));
        }
        let meta: Vec<EntryMeta> = serde_json::from_slice(&body[vec_bytes..])
            .map_err(|e| StoreError::Corrupt(format!("metadata section: {e}")))?;
        if meta.len() != count {
            return Err(StoreError::Corrupt(format!(
                "{} metadata records for {count} vectors",
                meta.len()
            )));
        }
        let mut index = if count == 0 && dim == 0 {
            VectorIndex::new()
        } else {
            VectorIndex::with_dim(dim)
        };
        let entries = meta
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let start = i * dim * 8;
                let values = body[start..start + dim * 8]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let vector = EmbeddingVector::new(values)
                    .map_err(|e: EmbeddingError| StoreError::Corrupt(format!("entry {i}: {e}")))?;
                Ok(IndexEntry {
                    chunk_id: m.chunk_id,
                    vector,
                    text: m.text,
                    metadata: m.metadata,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        index.add(entries)?;
        Ok(index)
    }

    /// Writes the index file, replacing `path` atomically.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
