//! # kleio-core
//!
//! Retrieval-augmented question answering over private document corpora.
//!
//! The pipeline runs in two stages. Ingestion extracts the text of every
//! source document, slices it into equally-sized overlapping chunks, embeds
//! each chunk and stores it in an exact cosine-similarity index. Answering a
//! question embeds it, retrieves the top-k eligible chunks, assembles a
//! prompt within the model's context budget and attaches source attributions
//! and a grounding score to the model's reply.
//!
//! Two evaluation workflows sit on top of the pipeline:
//!
//! - [`qa_pipeline::run_batch`] answers a CSV of questions and writes a CSV
//!   report; [`grading`] aggregates human pass/fail grades into per-category
//!   accuracy tables.
//! - [`genealogy`] prompts a model for a person table from genealogical
//!   prose, parses and validates it, suggests truncated compound surnames and
//!   diffs the result against a gold table.
//!
//! ## Modules
//!
//! - [`corpus`] - document ingestion and the on-disk document store
//! - [`chunker`] - fixed-size overlapping chunks and retrieval filters
//! - [`embedder`] - HTTP and deterministic embedding backends
//! - [`vector_index`] - exact top-k index with bit-exact persistence
//! - [`llm_gateway`] - chat completion over HTTP or a scripted mock
//! - [`indexing`] - corpus to index ingestion glue
//! - [`qa_pipeline`] - ask, grounding and the CSV batch runner
//! - [`grading`] - accuracy aggregation and table rendering
//! - [`genealogy`] - person table extraction and diffing

pub mod chunker;
pub mod corpus;
pub mod embedder;
pub mod genealogy;
pub mod grading;
pub mod indexing;
pub mod llm_gateway;
pub mod qa_pipeline;
pub mod text;
pub mod vector_index;

pub use chunker::{Chunk, ChunkingConfig};
pub use corpus::{Document, DocumentStore};
pub use embedder::{Embedder, EmbedderProfile, EmbeddingVector};
pub use llm_gateway::{Gateway, ModelProfile};
pub use qa_pipeline::{Answer, Category, QaEngine};
pub use vector_index::{RetrievalHit, SharedIndex, VectorIndex};
