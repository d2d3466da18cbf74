#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kleio_core::corpus::DocumentStore;
use kleio_core::embedder::DeterministicEmbedder;
use kleio_core::indexing::ingest_into;
use kleio_core::qa_pipeline::{QaEngine, QaOptions};
use kleio_core::{ChunkingConfig, Gateway, ModelProfile, VectorIndex};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub struct Planted {
    pub id: String,
    pub sentence: String,
    pub doc: String,
}

pub fn planted_expectations() -> Vec<Planted> {
    let mut r = csv::Reader::from_path(fixture("planted/expected.csv")).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Planted {
                id: rec[0].to_string(),
                sentence: rec[1].to_string(),
                doc: rec[2].trim_end_matches(".txt").to_string(),
            }
        })
        .collect()
}

/// Ingests the planted corpus into a fresh store under `dir` and returns an
/// engine over it with the deterministic embedder and corpus-aware mock.
pub fn planted_engine(dir: &Path) -> QaEngine {
    let mut store = DocumentStore::open(dir.join("store")).unwrap();
    let embedder = DeterministicEmbedder::new(384);
    let mut index = VectorIndex::new(384);
    let cfg = ChunkingConfig::default();
    let summary = ingest_into(&fixture("planted/docs"), &mut store, &mut index, &embedder, &cfg).unwrap();
    assert_eq!(summary.documents_added, 20);
    let gateway = Gateway::from_profile(ModelProfile::default()).unwrap();
    QaEngine::over(index, Arc::new(embedder), Arc::new(gateway), QaOptions::default())
}
