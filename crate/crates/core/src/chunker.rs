//! Fixed-size overlapping chunks and the retrieval-eligibility filters.
//!
//! Chunks start at offsets `0, s, 2s, ...` with stride
//! `s = chunk_size - overlap` and stop at the first chunk that reaches the
//! end of the text, so every chunk but the last has exactly `chunk_size`
//! characters. Slicing is by character and ignores word boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("overlap ({overlap}) must be smaller than chunk_size ({chunk_size})")]
    OverlapTooLarge { chunk_size: usize, overlap: usize },
    #[error("threshold {name} = {value} must lie in [0, 1]")]
    ThresholdOutOfRange { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    /// Chunks shorter than this are not retrieved.
    pub min_chunk_chars: usize,
    /// A reference-section heading only counts inside this trailing
    /// fraction of the document.
    pub bibliography_tail_fraction: f64,
    /// Minimum share of citation-like lines that marks a chunk
    /// bibliographic.
    pub citation_line_fraction: f64,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            chunk_size: 1000,
            overlap: 200,
            min_chunk_chars: 200,
            bibliography_tail_fraction: 0.25,
            citation_line_fraction: 0.6,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.overlap >= self.chunk_size {
            return Err(ConfigError::OverlapTooLarge {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        for (name, value) in [
            ("bibliography_tail_fraction", self.bibliography_tail_fraction),
            ("citation_line_fraction", self.citation_line_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::ThresholdOutOfRange { name, value });
            }
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// `<doc_id>:<seq_index>`
    pub chunk_id: String,
    pub doc_id: String,
    pub seq_index: usize,
    pub text: String,
    /// Character offsets into the document's full text, `[start, end)`.
    pub char_start: usize,
    pub char_end: usize,
    pub page_hint: usize,
    pub bibliographic: bool,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

/// Character intervals `[start, end)` that chunking a text of `len`
/// characters produces.
pub fn chunk_spans(len: usize, chunk_size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let stride = chunk_size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + chunk_size).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start += stride;
    }
    spans
}

/// Slices `doc` into chunks and marks bibliographic ones.
///
/// `cfg` must be valid; see [`ChunkingConfig::validate`].
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    debug_assert!(cfg.validate().is_ok());
    let mut bytes: Vec<usize> = doc.full_text.char_indices().map(|(b, _)| b).collect();
    let len = bytes.len();
    bytes.push(doc.full_text.len());

    let bib_start = bibliography_start(doc, cfg);
    chunk_spans(len, cfg.chunk_size, cfg.overlap)
        .into_iter()
        .enumerate()
        .map(|(seq, (start, end))| {
            let text = doc.full_text[bytes[start]..bytes[end]].to_string();
            let bibliographic = bib_start.is_some_and(|b| start >= b)
                || citation_dense(&text, cfg.citation_line_fraction);
            Chunk {
                chunk_id: format!("{}:{}", doc.doc_id, seq),
                doc_id: doc.doc_id.clone(),
                seq_index: seq,
                text,
                char_start: start,
                char_end: end,
                page_hint: doc.page_of(start),
                bibliographic,
            }
        })
        .collect()
}

const REFERENCE_HEADINGS: [&str; 4] = ["bibliography", "references", "works cited", "sources"];

fn is_reference_heading(line: &str) -> bool {
    let core = line
        .trim()
        .trim_start_matches('#')
        .trim()
        .trim_end_matches([':', '.'])
        .trim()
        .to_lowercase();
    REFERENCE_HEADINGS.contains(&core.as_str())
}

/// Character offset of the last reference-section heading line that lies
/// within the trailing `bibliography_tail_fraction` of the document.
pub fn bibliography_start(doc: &Document, cfg: &ChunkingConfig) -> Option<usize> {
    let len = doc.char_len();
    if len == 0 {
        return None;
    }
    let threshold = len as f64 * (1.0 - cfg.bibliography_tail_fraction);
    let mut offset = 0usize;
    let mut found = None;
    for line in doc.full_text.split('\n') {
        if offset as f64 >= threshold && is_reference_heading(line) {
            found = Some(offset);
        }
        offset += line.chars().count() + 1;
    }
    found
}

fn has_four_digit_year(line: &str) -> bool {
    let bytes = line.as_bytes();
    let mut run = 0;
    for (i, b) in bytes.iter().enumerate() {
        if b.is_ascii_digit() {
            run += 1;
        } else {
            if run == 4 {
                return true;
            }
            run = 0;
        }
        if i + 1 == bytes.len() && run == 4 {
            return true;
        }
    }
    false
}

const CITATION_MARKERS: [&str; 5] = ["pp.", "ed.", "Press", "University", "vol."];

/// A line that looks like a bibliography entry: a four-digit year plus a
/// publication marker.
pub fn is_citation_line(line: &str) -> bool {
    has_four_digit_year(line) && CITATION_MARKERS.iter().any(|m| contains_word(line, m))
}

fn contains_word(line: &str, marker: &str) -> bool {
    line.match_indices(marker).any(|(i, _)| {
        !line[..i].chars().next_back().is_some_and(char::is_alphanumeric)
    })
}

fn citation_dense(text: &str, fraction: f64) -> bool {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return false;
    }
    let hits = lines.iter().filter(|l| is_citation_line(l)).count();
    hits as f64 >= fraction * lines.len() as f64
}

/// Whether `chunk` falls in a reference section of `doc` or is dominated by
/// citation lines.
pub fn is_bibliographic(chunk: &Chunk, doc: &Document, cfg: &ChunkingConfig) -> bool {
    bibliography_start(doc, cfg).is_some_and(|b| chunk.char_start >= b)
        || citation_dense(&chunk.text, cfg.citation_line_fraction)
}

pub fn eligible_for_retrieval(chunk: &Chunk, cfg: &ChunkingConfig) -> bool {
    chunk.char_len() >= cfg.min_chunk_chars && !chunk.bibliographic
}
