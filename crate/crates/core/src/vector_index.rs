//! Exact cosine-similarity index over chunk embeddings.
//!
//! Vectors live in one contiguous row-major `f32` buffer and every query is
//! a full scan, so results are exact: hits are ordered by descending score
//! with ties broken by ascending chunk id.
//!
//! On disk:
//!
//! ```text
//! index/manifest.json   {"format_version", "dim", "count", "checksum"}
//! index/chunks.jsonl    one chunk record per line
//! index/vectors.f32     little-endian f32, row i at byte offset i * dim * 4
//! ```
//!
//! The checksum is SHA-256 over `chunks.jsonl` followed by `vectors.f32`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{Chunk, ChunkingConfig};
use crate::embedder::{dot, EmbeddingVector};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index at {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Retrieval flags cached from the chunker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityFlags {
    pub length_ok: bool,
    pub bibliographic: bool,
}

impl EligibilityFlags {
    pub fn for_chunk(chunk: &Chunk, cfg: &ChunkingConfig) -> Self {
        EligibilityFlags {
            length_ok: chunk.char_len() >= cfg.min_chunk_chars,
            bibliographic: chunk.bibliographic,
        }
    }
}

/// A chunk as stored in the index: the chunk itself plus the owning
/// document's title and cached flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub doc_title: String,
    pub seq_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub page_hint: usize,
    pub flags: EligibilityFlags,
    pub text: String,
}

impl StoredChunk {
    pub fn new(chunk: Chunk, doc_title: impl Into<String>, cfg: &ChunkingConfig) -> Self {
        let flags = EligibilityFlags::for_chunk(&chunk, cfg);
        StoredChunk {
            chunk_id: chunk.chunk_id,
            doc_id: chunk.doc_id,
            doc_title: doc_title.into(),
            seq_index: chunk.seq_index,
            char_start: chunk.char_start,
            char_end: chunk.char_end,
            page_hint: chunk.page_hint,
            flags,
            text: chunk.text,
        }
    }

    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

/// Query-time retrieval filter: long enough and not bibliographic.
///
/// Length is checked against the text rather than the cached flag, so the
/// threshold can change without re-indexing.
pub fn eligible(chunk: &StoredChunk, cfg: &ChunkingConfig) -> bool {
    chunk.char_len() >= cfg.min_chunk_chars && !chunk.flags.bibliographic
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk: StoredChunk,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    chunks: Vec<StoredChunk>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

/// Heap element ordered so that the *worst* hit sits at the top.
struct Candidate<'a> {
    score: f64,
    chunk_id: &'a str,
    row: usize,
}

impl Candidate<'_> {
    /// `Less` means ranked before `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.chunk_id.cmp(other.chunk_id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexManifest {
    format_version: u32,
    dim: usize,
    count: usize,
    checksum: String,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "index dim must be at least 1");
        VectorIndex {
            dim,
            chunks: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.positions.contains_key(chunk_id)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&StoredChunk> {
        self.positions.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn vector(&self, chunk_id: &str) -> Option<&[f32]> {
        self.positions
            .get(chunk_id)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Chunks in insertion order.
    pub fn chunks(&self) -> impl Iterator<Item = &StoredChunk> {
        self.chunks.iter()
    }

    /// Inserts or replaces entries by chunk id. Either every entry is applied
    /// or, on a dimension mismatch, none is. Returns the number of entries
    /// written.
    pub fn add(&mut self, entries: Vec<IndexEntry>) -> Result<usize, IndexError> {
        if let Some(bad) = entries.iter().find(|e| e.vector.dim() != self.dim) {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: bad.vector.dim(),
            });
        }
        let count = entries.len();
        for IndexEntry { chunk, vector } in entries {
            let norm = vector.norm();
            match self.positions.get(&chunk.chunk_id) {
                Some(&row) => {
                    self.vectors[row * self.dim..(row + 1) * self.dim]
                        .copy_from_slice(&vector.values);
                    self.norms[row] = norm;
                    self.chunks[row] = chunk;
                }
                None => {
                    self.positions.insert(chunk.chunk_id.clone(), self.chunks.len());
                    self.vectors.extend_from_slice(&vector.values);
                    self.norms.push(norm);
                    self.chunks.push(chunk);
                }
            }
        }
        Ok(count)
    }

    /// Exact top-`k` cosine query over entries accepted by `filter`.
    pub fn query_top_k<F>(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: F,
    ) -> Result<Vec<RetrievalHit>, IndexError>
    where
        F: Fn(&StoredChunk) -> bool,
    {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q_norm = query.norm();
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (row, chunk) in self.chunks.iter().enumerate() {
            if !filter(chunk) {
                continue;
            }
            let denom = q_norm * self.norms[row];
            let score = if denom == 0.0 {
                0.0
            } else {
                dot(&query.values, &self.vectors[row * self.dim..(row + 1) * self.dim]) / denom
            };
            let cand = Candidate {
                score,
                chunk_id: &chunk.chunk_id,
                row,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| RetrievalHit {
                chunk_id: self.chunks[c.row].chunk_id.clone(),
                score: c.score,
                rank: i + 1,
            })
            .collect())
    }

    /// Writes the index under `dir`, replacing any previous contents.
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut jsonl = Vec::new();
        for chunk in &self.chunks {
            serde_json::to_writer(&mut jsonl, chunk).expect("chunk record serializes");
            jsonl.push(b'\n');
        }
        let mut raw = Vec::with_capacity(self.vectors.len() * 4);
        for v in &self.vectors {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        let manifest = IndexManifest {
            format_version: INDEX_FORMAT_VERSION,
            dim: self.dim,
            count: self.chunks.len(),
            checksum: checksum(&jsonl, &raw),
        };
        write_file(&dir.join("chunks.jsonl"), &jsonl)?;
        write_file(&dir.join("vectors.f32"), &raw)?;
        let manifest = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &manifest)
    }

    /// Loads an index written by [`VectorIndex::save`].
    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest_path = dir.join("manifest.json");
        let manifest_raw = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: IndexManifest = serde_json::from_slice(&manifest_raw)
            .map_err(|e| IndexError::CorruptIndex(format!("manifest: {e}")))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch {
                found: manifest.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        if manifest.dim == 0 {
            return Err(IndexError::CorruptIndex("dim is zero".into()));
        }
        let chunks_path = dir.join("chunks.jsonl");
        let vectors_path = dir.join("vectors.f32");
        let jsonl = fs::read(&chunks_path).map_err(io_err(&chunks_path))?;
        let raw = fs::read(&vectors_path).map_err(io_err(&vectors_path))?;
        let expected_len = manifest.count * manifest.dim * 4;
        if raw.len() != expected_len {
            return Err(IndexError::CorruptIndex(format!(
                "vectors.f32 holds {} bytes, expected {expected_len}",
                raw.len()
            )));
        }
        if checksum(&jsonl, &raw) != manifest.checksum {
            return Err(IndexError::CorruptIndex("checksum mismatch".into()));
        }
        let mut index = VectorIndex::new(manifest.dim);
        for (i, line) in BufReader::new(jsonl.as_slice()).lines().enumerate() {
            let line = line.map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
            let chunk: StoredChunk = serde_json::from_str(&line)
                .map_err(|e| IndexError::CorruptIndex(format!("chunks.jsonl line {}: {e}", i + 1)))?;
            if index.positions.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(IndexError::CorruptIndex(format!(
                    "duplicate chunk id {}",
                    chunk.chunk_id
                )));
            }
            index.chunks.push(chunk);
        }
        if index.chunks.len() != manifest.count {
            return Err(IndexError::CorruptIndex(format!(
                "{} chunk records for count {}",
                index.chunks.len(),
                manifest.count
            )));
        }
        index.vectors = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        index.norms = index
            .vectors
            .chunks_exact(index.dim)
            .map(|row| dot(row, row).sqrt())
            .collect();
        Ok(index)
    }

    /// Loads the index under `dir`, or returns an empty one of `dim` when no
    /// manifest exists yet.
    pub fn open_or_create(dir: &Path, dim: usize) -> Result<Self, IndexError> {
        if dir.join("manifest.json").exists() {
            let index = Self::load(dir)?;
            if index.dim != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: index.dim,
                    got: dim,
                });
            }
            Ok(index)
        } else {
            Ok(Self::new(dim))
        }
    }
}

fn checksum(jsonl: &[u8], raw: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(jsonl);
    h.update(raw);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Cross-process writer lock: a `.lock` file created exclusively in the
/// index directory and removed on drop.
#[derive(Debug)]
pub struct IndexLock {
    path: PathBuf,
    _file: File,
}

impl IndexLock {
    pub fn acquire(dir: &Path) -> Result<Self, IndexError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => Ok(IndexLock { path, _file: file }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(IndexError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for IndexLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Snapshot-published index for concurrent readers.
///
/// Readers clone the current `Arc` and query it without holding any lock.
/// Writers serialize on a mutex, copy the current snapshot, mutate the copy
/// and publish it, so no reader ever sees a partial write.
#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<VectorIndex>>,
    writer: Mutex<()>,
}

impl SharedIndex {
    pub fn new(index: VectorIndex) -> Self {
        SharedIndex {
            current: RwLock::new(Arc::new(index)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<VectorIndex> {
        self.current.read().expect("index lock poisoned").clone()
    }

    /// Applies `f` to a copy of the current snapshot and publishes it if `f`
    /// succeeds. Returns `None` if another writer holds the lock.
    pub fn try_update<T, E>(
        &self,
        f: impl FnOnce(&mut VectorIndex) -> Result<T, E>,
    ) -> Option<Result<T, E>> {
        let _guard = match self.writer.try_lock() {
            Ok(g) => g,
            Err(std::sync::TryLockError::WouldBlock) => return None,
            Err(std::sync::TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let mut next = (*self.snapshot()).clone();
        let result = f(&mut next);
        if result.is_ok() {
            *self.current.write().expect("index lock poisoned") = Arc::new(next);
        }
        Some(result)
    }
}
