//! Document ingestion and the on-disk document store.
//!
//! Source files are PDFs with a text layer or plain text (`.txt`, `.md`).
//! Extracted text is NFC-normalized with CRLF folded to LF, and a document's
//! id is the first 16 hex characters of the SHA-256 of that normalized text,
//! so ingesting the same bytes twice is a no-op.
//!
//! Store layout:
//!
//! ```text
//! store/manifest.json        {"format_version": 1, "doc_ids": [...]}
//! store/docs/<doc_id>.json   metadata
//! store/docs/<doc_id>.txt    normalized text, UTF-8, LF
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("path not found: {0}")]
    PathNotFound(PathBuf),
    #[error("PDF has no extractable text layer; run OCR first")]
    NoTextLayer,
    #[error("document is empty after extraction")]
    EmptyDocument,
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("unsupported file type: {0}")]
    UnsupportedFile(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt document store: {0}")]
    CorruptStore(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    Pdf,
    Plain,
}

impl DocumentKind {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pdf" => Some(DocumentKind::Pdf),
            "txt" | "md" => Some(DocumentKind::Plain),
            _ => None,
        }
    }
}

/// An ingested source document. Immutable once created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_path: PathBuf,
    pub title: String,
    pub language_tag: String,
    #[serde(skip)]
    pub full_text: String,
    /// Character offset at which each page begins.
    pub page_offsets: Vec<usize>,
    /// UTC seconds.
    pub ingested_at: u64,
}

impl Document {
    pub fn new(
        source_path: impl Into<PathBuf>,
        title: impl Into<String>,
        full_text: String,
        page_offsets: Vec<usize>,
    ) -> Self {
        let ingested_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Document {
            doc_id: doc_id_for(&full_text),
            source_path: source_path.into(),
            title: title.into(),
            language_tag: "en".to_string(),
            full_text,
            page_offsets,
            ingested_at,
        }
    }

    /// Length of `full_text` in characters.
    pub fn char_len(&self) -> usize {
        self.full_text.chars().count()
    }

    /// Index of the page containing character `offset`.
    pub fn page_of(&self, offset: usize) -> usize {
        self.page_offsets
            .partition_point(|&start| start <= offset)
            .saturating_sub(1)
    }
}

/// First 16 hex characters of SHA-256 over the normalized text.
pub fn doc_id_for(normalized_text: &str) -> String {
    let digest = Sha256::digest(normalized_text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn normalize(text: &str) -> String {
    text.replace("\r\n", "\n").nfc().collect()
}

/// Extracts normalized text and per-page character offsets.
///
/// Plain text yields a single page. Every PDF page contributes at least one
/// character (pages are newline-terminated), so offsets stay strictly
/// increasing even across blank pages.
pub fn extract_text(bytes: &[u8], kind: DocumentKind) -> Result<(String, Vec<usize>)> {
    if bytes.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    match kind {
        DocumentKind::Plain => {
            let raw = std::str::from_utf8(bytes)
                .map_err(|e| CorpusError::MalformedFile(format!("invalid UTF-8: {e}")))?;
            let text = normalize(raw);
            if text.trim().is_empty() {
                return Err(CorpusError::EmptyDocument);
            }
            Ok((text, vec![0]))
        }
        DocumentKind::Pdf => extract_pdf(bytes),
    }
}

fn extract_pdf(bytes: &[u8]) -> Result<(String, Vec<usize>)> {
    let pdf = lopdf::Document::load_mem(bytes)
        .map_err(|e| CorpusError::MalformedFile(format!("PDF: {e}")))?;
    let mut text = String::new();
    let mut offsets = Vec::new();
    let mut chars = 0usize;
    let mut any_text = false;
    for page in pdf.get_pages().keys() {
        let mut page_text = normalize(&pdf.extract_text(&[*page]).unwrap_or_default());
        any_text |= !page_text.trim().is_empty();
        if !page_text.ends_with('\n') {
            page_text.push('\n');
        }
        offsets.push(chars);
        chars += page_text.chars().count();
        text.push_str(&page_text);
    }
    if !any_text {
        return Err(CorpusError::NoTextLayer);
    }
    Ok((text, offsets))
}

/// Reads and extracts a single file into a [`Document`].
pub fn read_document(path: &Path) -> Result<Document> {
    let kind =
        DocumentKind::from_path(path).ok_or_else(|| CorpusError::UnsupportedFile(path.into()))?;
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let (full_text, page_offsets) = extract_text(&bytes, kind)?;
    let title = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("untitled")
        .to_string();
    Ok(Document::new(path, title, full_text, page_offsets))
}

/// Writes a minimal PDF whose pages carry the given texts in a Type1 font.
///
/// Used to build fixtures; lines within a page are separated by `\n`.
pub fn write_text_pdf(pages: &[&str]) -> Vec<u8> {
    use lopdf::content::{Content, Operation};
    use lopdf::{dictionary, Object, Stream};

    let mut doc = lopdf::Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Courier",
    });
    let resources_id = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => font_id },
    });
    let mut kids = Vec::new();
    for page_text in pages {
        let mut ops = vec![
            Operation::new("BT", vec![]),
            Operation::new("Tf", vec!["F1".into(), 12.into()]),
            Operation::new("Td", vec![72.into(), 720.into()]),
        ];
        for (i, line) in page_text.lines().enumerate() {
            if i > 0 {
                ops.push(Operation::new("Td", vec![0.into(), (-14).into()]));
            }
            ops.push(Operation::new("Tj", vec![Object::string_literal(line)]));
        }
        ops.push(Operation::new("ET", vec![]));
        let content = Content { operations: ops };
        let content_id = doc.add_object(Stream::new(
            dictionary! {},
            content.encode().expect("content encodes"),
        ));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "Contents" => content_id,
        });
        kids.push(page_id.into());
    }
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
            "MediaBox" => vec![0.into(), 0.into(), 612.into(), 792.into()],
        }),
    );
    let catalog_id = doc.add_object(dictionary! {
        "Type" => "Catalog",
        "Pages" => pages_id,
    });
    doc.trailer.set("Root", catalog_id);
    let mut out = Vec::new();
    doc.save_to(&mut out).expect("in-memory PDF write");
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    doc_ids: Vec<String>,
}

/// Directory-backed document store. Single writer; callers serialize access.
#[derive(Debug)]
pub struct DocumentStore {
    root: PathBuf,
    docs: BTreeMap<String, Document>,
}

impl DocumentStore {
    /// Opens the store at `root`, creating an empty one if absent.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let docs_dir = root.join("docs");
        fs::create_dir_all(&docs_dir).map_err(|e| CorpusError::io(&docs_dir, e))?;
        let manifest_path = root.join("manifest.json");
        let mut docs = BTreeMap::new();
        if manifest_path.exists() {
            let raw =
                fs::read_to_string(&manifest_path).map_err(|e| CorpusError::io(&manifest_path, e))?;
            let manifest: StoreManifest = serde_json::from_str(&raw)
                .map_err(|e| CorpusError::CorruptStore(format!("manifest: {e}")))?;
            if manifest.format_version != STORE_FORMAT_VERSION {
                return Err(CorpusError::CorruptStore(format!(
                    "unsupported store format version {}",
                    manifest.format_version
                )));
            }
            for id in manifest.doc_ids {
                let meta_path = docs_dir.join(format!("{id}.json"));
                let text_path = docs_dir.join(format!("{id}.txt"));
                let meta =
                    fs::read_to_string(&meta_path).map_err(|e| CorpusError::io(&meta_path, e))?;
                let mut doc: Document = serde_json::from_str(&meta)
                    .map_err(|e| CorpusError::CorruptStore(format!("{id}: {e}")))?;
                doc.full_text =
                    fs::read_to_string(&text_path).map_err(|e| CorpusError::io(&text_path, e))?;
                docs.insert(id, doc);
            }
        }
        Ok(DocumentStore { root, docs })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    /// Documents in ascending doc_id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    /// Persists `doc`. Returns `false` without touching disk if a document
    /// with the same id is already stored.
    pub fn insert(&mut self, doc: Document) -> Result<bool> {
        if self.docs.contains_key(&doc.doc_id) {
            return Ok(false);
        }
        let docs_dir = self.root.join("docs");
        let text_path = docs_dir.join(format!("{}.txt", doc.doc_id));
        let meta_path = docs_dir.join(format!("{}.json", doc.doc_id));
        write_atomic(&text_path, doc.full_text.as_bytes())?;
        let meta = serde_json::to_vec_pretty(&doc).expect("document metadata serializes");
        write_atomic(&meta_path, &meta)?;
        self.docs.insert(doc.doc_id.clone(), doc);
        self.write_manifest()?;
        Ok(true)
    }

    fn write_manifest(&self) -> Result<()> {
        let manifest = StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            doc_ids: self.docs.keys().cloned().collect(),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.root.join("manifest.json"), &bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CorpusError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug)]
pub struct IngestFailure {
    pub path: PathBuf,
    pub error: CorpusError,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    /// Every successfully read document, whether new or already stored.
    pub documents: Vec<Document>,
    /// Ids of documents newly persisted by this call.
    pub added: Vec<String>,
    pub failures: Vec<IngestFailure>,
}

/// Collects ingestible files under `path` in sorted order.
///
/// A directory is walked recursively and files with unknown extensions are
/// skipped; a file path is returned as-is.
pub fn discover_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CorpusError::PathNotFound(path.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            CorpusError::io(path, e.into_io_error().unwrap_or_else(|| io::ErrorKind::Other.into()))
        })?;
        if entry.file_type().is_file() && DocumentKind::from_path(entry.path()).is_some() {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Ingests a file or directory into `store`.
///
/// Files are extracted in parallel and written sequentially. Per-file
/// failures are collected in the report; only a missing `path` is fatal.
pub fn ingest_path(path: &Path, store: &mut DocumentStore) -> Result<IngestReport> {
    let files = discover_files(path)?;
    let extracted: Vec<(PathBuf, Result<Document>)> = files
        .into_par_iter()
        .map(|file| {
            let doc = read_document(&file);
            (file, doc)
        })
        .collect();

    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (file, doc) in extracted {
        match doc {
            Ok(doc) => {
                if !seen.insert(doc.doc_id.clone()) {
                    continue;
                }
                let id = doc.doc_id.clone();
                match store.insert(doc.clone()) {
                    Ok(true) => {
                        report.added.push(id.clone());
                        report.documents.push(doc);
                    }
                    Ok(false) => report
                        .documents
                        .push(store.get(&id).cloned().unwrap_or(doc)),
                    Err(error) => report.failures.push(IngestFailure { path: file, error }),
                }
            }
            Err(error) => report.failures.push(IngestFailure { path: file, error }),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub document_count: usize,
    pub total_words: usize,
    pub unique_word_forms: usize,
}

/// Normalized word form: lowercased, leading and trailing non-alphanumeric
/// characters stripped. `None` when nothing remains.
pub fn word_form(token: &str) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    (!trimmed.is_empty()).then(|| trimmed.to_lowercase())
}

/// Word counts over the whole store: whitespace tokens, case-folded, with
/// surrounding punctuation stripped.
pub fn corpus_stats(store: &DocumentStore) -> CorpusStats {
    let mut total = 0;
    let mut forms = HashSet::new();
    for doc in store.documents() {
        for form in doc.full_text.split_whitespace().filter_map(word_form) {
            total += 1;
            forms.insert(form);
        }
    }
    CorpusStats {
        document_count: store.len(),
        total_words: total,
        unique_word_forms: forms.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_normalizes_line_endings() {
        let (text, pages) = extract_text(b"hola\r\nmundo", DocumentKind::Plain).unwrap();
        assert_eq!(text, "hola\nmundo");
        assert_eq!(pages, vec![0]);
    }

    #[test]
    fn plain_text_is_nfc() {
        let decomposed = "Ajuri\u{0301}a";
        let (text, _) = extract_text(decomposed.as_bytes(), DocumentKind::Plain).unwrap();
        assert_eq!(text, "Ajuría");
    }

    #[test]
    fn empty_payloads_are_rejected() {
        assert!(matches!(
            extract_text(b"", DocumentKind::Plain),
            Err(CorpusError::EmptyDocument)
        ));
        assert!(matches!(
            extract_text(b"", DocumentKind::Pdf),
            Err(CorpusError::EmptyDocument)
        ));
        assert!(matches!(
            extract_text(b" \n\t ", DocumentKind::Plain),
            Err(CorpusError::EmptyDocument)
        ));
    }

    #[test]
    fn garbage_pdf_is_malformed() {
        assert!(matches!(
            extract_text(b"not a pdf at all", DocumentKind::Pdf),
            Err(CorpusError::MalformedFile(_))
        ));
    }

    #[test]
    fn two_page_pdf_yields_two_offsets() {
        let pdf = write_text_pdf(&["alpha", "beta"]);
        let (text, pages) = extract_text(&pdf, DocumentKind::Pdf).unwrap();
        assert!(text.contains("alpha"), "{text:?}");
        assert!(text.contains("beta"), "{text:?}");
        assert_eq!(pages.len(), 2);
        assert_eq!(pages[0], 0);
        assert!(pages[1] > pages[0]);
        let second: String = text.chars().skip(pages[1]).collect();
        assert!(second.trim_start().starts_with("beta"));
    }

    #[test]
    fn blank_pdf_has_no_text_layer() {
        let pdf = write_text_pdf(&["", ""]);
        assert!(matches!(
            extract_text(&pdf, DocumentKind::Pdf),
            Err(CorpusError::NoTextLayer)
        ));
    }

    #[test]
    fn doc_id_is_deterministic() {
        assert_eq!(doc_id_for("abc"), doc_id_for("abc"));
        assert_ne!(doc_id_for("abc"), doc_id_for("abd"));
        assert_eq!(doc_id_for("abc").len(), 16);
    }

    #[test]
    fn stats_fold_case_and_punctuation() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(corpus_stats(&store), CorpusStats::default());
        store
            .insert(Document::new("a.txt", "a", "A a b.".into(), vec![0]))
            .unwrap();
        let stats = corpus_stats(&store);
        assert_eq!(stats.document_count, 1);
        assert_eq!(stats.total_words, 3);
        assert_eq!(stats.unique_word_forms, 2);
    }

    #[test]
    fn page_of_uses_offsets() {
        let doc = Document::new("x", "x", "aaaabbbb".into(), vec![0, 4]);
        assert_eq!(doc.page_of(0), 0);
        assert_eq!(doc.page_of(3), 0);
        assert_eq!(doc.page_of(4), 1);
        assert_eq!(doc.page_of(7), 1);
    }
}
