//! Ingestion glue: corpus → chunker → embedder → index.

use std::path::Path;

use thiserror::Error;

use crate::chunker::{chunk_document, ChunkingConfig, ConfigError};
use crate::corpus::{ingest_path, CorpusError, Document, DocumentStore, IngestFailure};
use crate::embedder::{EmbedError, Embedder};
use crate::vector_index::{IndexEntry, IndexError, StoredChunk, VectorIndex};

const EMBED_CALL_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum IndexingError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Default)]
pub struct IngestSummary {
    pub documents_added: usize,
    pub documents_seen: usize,
    pub chunks_indexed: usize,
    pub failures: Vec<IngestFailure>,
}

/// Chunks, embeds and upserts `docs` into `index`. Returns the number of
/// chunks written.
pub fn index_documents(
    docs: &[&Document],
    index: &mut VectorIndex,
    embedder: &dyn Embedder,
    cfg: &ChunkingConfig,
) -> Result<usize, IndexingError> {
    cfg.validate()?;
    if embedder.dim() != index.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: index.dim(),
            got: embedder.dim(),
        }
        .into());
    }
    let chunks: Vec<StoredChunk> = docs
        .iter()
        .flat_map(|doc| {
            chunk_document(doc, cfg)
                .into_iter()
                .map(|c| StoredChunk::new(c, doc.title.clone(), cfg))
        })
        .collect();
    let mut written = 0;
    for batch in chunks.chunks(EMBED_CALL_SIZE) {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let vectors = embedder.embed(&texts)?;
        let entries = batch
            .iter()
            .cloned()
            .zip(vectors)
            .map(|(chunk, vector)| IndexEntry { chunk, vector })
            .collect();
        written += index.add(entries)?;
    }
    Ok(written)
}

/// Ingests `path` into the store and indexes every document that is new or
/// missing from the index. Re-ingesting indexed files adds nothing.
pub fn ingest_into(
    path: &Path,
    store: &mut DocumentStore,
    index: &mut VectorIndex,
    embedder: &dyn Embedder,
    cfg: &ChunkingConfig,
) -> Result<IngestSummary, IndexingError> {
    let report = ingest_path(path, store)?;
    let pending: Vec<&Document> = report
        .documents
        .iter()
        .filter(|d| report.added.contains(&d.doc_id) || !index.contains(&format!("{}:0", d.doc_id)))
        .collect();
    let chunks_indexed = index_documents(&pending, index, embedder, cfg)?;
    Ok(IngestSummary {
        documents_added: report.added.len(),
        documents_seen: report.documents.len(),
        chunks_indexed,
        failures: report.failures,
    })
}
