//! Embedded vector collections with exact top-k cosine retrieval.
//!
//! A collection is a map of chunk id to [`ChunkRecord`] behind a
//! reader-writer lock, so queries never observe a partially applied upsert.
//! Collections persist to a single file:
//!
//! ```text
//! magic "QVEC" | version u16 | dimension u32 | name (u32 len + utf8) | count u64
//! count × (payload_len u32 | chunk_id | doc_id | ordinal u64 | text | dimension × f64)
//! sha256 of everything above (32 bytes)
//! ```
//!
//! Strings are u32-length-prefixed UTF-8; all integers and floats are
//! little-endian, floats as IEEE-754 binary64.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::similarity::{cosine_similarity, Embedding, SimilarityError};

pub const MAGIC: &[u8; 4] = b"QVEC";
pub const FORMAT_VERSION: u16 = 1;
pub const FILE_EXTENSION: &str = "qvs";
/// Default cosine-distance cutoff for showing a retrieved chunk.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.2;

const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("collection name must not be empty")]
    EmptyName,
    #[error("collection {0:?} already exists")]
    DuplicateName(String),
    #[error("collection {0:?} not found")]
    NotFound(String),
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("dimension mismatch: collection has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chunk {0:?} has a zero embedding")]
    DegenerateEmbedding(String),
    #[error("collection is empty")]
    EmptyCollection,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt collection file: {0}")]
    Corrupt(String),
    #[error("unsupported collection format version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: u64,
    pub text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub chunk: ChunkRecord,
    pub cosine: f64,
    /// Cosine distance, `1 - cosine`.
    pub distance: f64,
    pub qim_score: Option<f64>,
}

impl RankedResult {
    pub fn new(chunk: ChunkRecord, cosine: f64) -> Self {
        Self {
            chunk,
            cosine,
            distance: 1.0 - cosine,
            qim_score: None,
        }
    }
}

#[derive(Debug)]
pub struct Collection {
    name: String,
    dimension: usize,
    records: RwLock<BTreeMap<String, ChunkRecord>>,
}

impl Collection {
    pub fn new(name: impl Into<String>, dimension: usize) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        if dimension == 0 {
            return Err(StoreError::InvalidDimension(dimension));
        }
        Ok(Self {
            name,
            dimension,
            records: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn count(&self) -> usize {
        self.records.read().expect("collection lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn get(&self, chunk_id: &str) -> Option<ChunkRecord> {
        self.records
            .read()
            .expect("collection lock poisoned")
            .get(chunk_id)
            .cloned()
    }

    /// All records in chunk-id order.
    pub fn records(&self) -> Vec<ChunkRecord> {
        self.records
            .read()
            .expect("collection lock poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn doc_chunks(&self, doc_id: &str) -> Vec<ChunkRecord> {
        self.records
            .read()
            .expect("collection lock poisoned")
            .values()
            .filter(|r| r.doc_id == doc_id)
            .cloned()
            .collect()
    }

    /// Inserts or replaces records by chunk id. The batch is validated as a
    /// whole first; on error nothing is written.
    pub fn upsert(&self, batch: Vec<ChunkRecord>) -> Result<usize> {
        for r in &batch {
            if r.embedding.dimension() != self.dimension {
                return Err(StoreError::DimensionMismatch {
                    expected: self.dimension,
                    got: r.embedding.dimension(),
                });
            }
            if r.embedding.is_degenerate() {
                return Err(StoreError::DegenerateEmbedding(r.chunk_id.clone()));
            }
        }
        let n = batch.len();
        let mut guard = self.records.write().expect("collection lock poisoned");
        for r in batch {
            guard.insert(r.chunk_id.clone(), r);
        }
        Ok(n)
    }

    /// Removes every chunk of `doc_id`, returning how many were dropped.
    pub fn remove_doc(&self, doc_id: &str) -> usize {
        let mut guard = self.records.write().expect("collection lock poisoned");
        let before = guard.len();
        guard.retain(|_, r| r.doc_id != doc_id);
        before - guard.len()
    }

    /// The `k` most similar records, by cosine descending then chunk id.
    pub fn query_topk(&self, query: &[f64], k: usize) -> Result<Vec<RankedResult>> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if query.len() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let guard = self.records.read().expect("collection lock poisoned");
        if guard.is_empty() {
            return Err(StoreError::EmptyCollection);
        }
        let mut scored = guard
            .values()
            .map(|r| Ok((cosine_similarity(query, &r.embedding)?, r)))
            .collect::<Result<Vec<_>>>()?;
        // BTreeMap iteration is already chunk-id ascending and the sort is
        // stable, so equal cosines keep that order.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(cos, r)| RankedResult::new(r.clone(), cos))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let guard = self.records.read().expect("collection lock poisoned");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        put_str(&mut out, &self.name);
        out.extend_from_slice(&(guard.len() as u64).to_le_bytes());
        for r in guard.values() {
            let mut payload = Vec::new();
            put_str(&mut payload, &r.chunk_id);
            put_str(&mut payload, &r.doc_id);
            payload.extend_from_slice(&r.ordinal.to_le_bytes());
            put_str(&mut payload, &r.text);
            for v in r.embedding.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
            return Err(StoreError::Corrupt("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(StoreError::Corrupt("checksum mismatch".into()));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(StoreError::Corrupt("bad magic".into()));
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dimension = cur.u32()? as usize;
        let name = cur.string()?;
        let count = cur.u64()?;
        let collection = Collection::new(name, dimension)
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let mut rec = Cursor {
                buf: cur.take(len)?,
                pos: 0,
            };
            let chunk_id = rec.string()?;
            let doc_id = rec.string()?;
            let ordinal = rec.u64()?;
            let text = rec.string()?;
            let values = (0..dimension)
                .map(|_| rec.f64())
                .collect::<Result<Vec<_>>>()?;
            if rec.pos != rec.buf.len() {
                return Err(StoreError::Corrupt("trailing bytes in record".into()));
            }
            let embedding =
                Embedding::new(values).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            records.insert(
                chunk_id.clone(),
                ChunkRecord {
                    chunk_id,
                    doc_id,
                    ordinal,
                    text,
                    embedding,
                },
            );
        }
        if cur.pos != body.len() {
            return Err(StoreError::Corrupt("trailing bytes after records".into()));
        }
        *collection.records.write().expect("collection lock poisoned") = records;
        Ok(collection)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| StoreError::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| StoreError::Corrupt("invalid utf-8".into()))
    }
}

/// Writes the collection atomically (temp file + rename).
pub fn persist(collection: &Collection, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, collection.to_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Collection> {
    Collection::from_bytes(&fs::read(path)?)
}

/// Keeps results whose cosine distance is at most `threshold`, in order.
pub fn filter_by_distance(results: Vec<RankedResult>, threshold: f64) -> Vec<RankedResult> {
    results
        .into_iter()
        .filter(|r| r.distance <= threshold)
        .collect()
}

/// A set of named collections, optionally backed by a directory holding one
/// `<name>.qvs` file per collection.
#[derive(Debug, Default)]
pub struct VectorStore {
    dir: Option<PathBuf>,
    collections: RwLock<HashMap<String, Arc<Collection>>>,
}

impl VectorStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory-backed store and loads every
    /// collection file in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut collections = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(FILE_EXTENSION) {
                let c = load(&path)?;
                collections.insert(c.name().to_string(), Arc::new(c));
            }
        }
        Ok(Self {
            dir: Some(dir),
            collections: RwLock::new(collections),
        })
    }

    pub fn create_collection(&self, name: &str, dimension: usize) -> Result<Arc<Collection>> {
        let collection = Collection::new(name, dimension)?;
        let mut guard = self.collections.write().expect("store lock poisoned");
        if guard.contains_key(name) {
            return Err(StoreError::DuplicateName(name.to_string()));
        }
        let collection = Arc::new(collection);
        if let Some(path) = self.path_for(name) {
            persist(&collection, &path)?;
        }
        guard.insert(name.to_string(), Arc::clone(&collection));
        Ok(collection)
    }

    pub fn get(&self, name: &str) -> Option<Arc<Collection>> {
        self.collections
            .read()
            .expect("store lock poisoned")
            .get(name)
            .cloned()
    }

    /// Persists a collection to its file, when the store is directory-backed.
    pub fn flush(&self, name: &str) -> Result<()> {
        let c = self.get(name).ok_or_else(|| StoreError::NotFound(name.into()))?;
        if let Some(path) = self.path_for(name) {
            persist(&c, &path)?;
        }
        Ok(())
    }

    fn path_for(&self, name: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{name}.{FILE_EXTENSION}")))
    }
}
