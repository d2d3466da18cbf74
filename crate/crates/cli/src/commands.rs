use std::collections::HashMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use kleio_core::corpus::{corpus_stats, CorpusError, CorpusStats, DocumentStore};
use kleio_core::embedder::embedder_from_profile;
use kleio_core::genealogy::{diff_extraction, extract_from_pages, read_records_csv, write_records_csv, DiscrepancyKind, PageOutcome};
use kleio_core::grading::{aggregate, read_grades, render_table, TableFormat};
use kleio_core::indexing::{ingest_into, IndexingError};
use kleio_core::llm_gateway::MockBackend;
use kleio_core::qa_pipeline::{read_report, run_batch, BatchError, BatchOptions, PipelineError, QaOptions};
use kleio_core::vector_index::IndexLock;
use kleio_core::{Gateway, QaEngine, VectorIndex};
use kleio_service::{check_bind, AppState, RouterOptions, Sessions};

use crate::config::CliConfig;
use crate::{ServeArgs, EXIT_FATAL, EXIT_USAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Finished, but some inputs failed.
    Partial,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

impl CliError {
    pub fn fatal(e: impl Display) -> Self {
        CliError::Fatal(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Fatal(_) => EXIT_FATAL,
        }
    }
}

fn context<E: Display>(what: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Fatal(format!("{what}: {e}"))
}

#[derive(Deserialize)]
struct ScriptEntry {
    contains: String,
    reply: String,
}

fn load_script(path: &Path) -> Result<MockBackend, CliError> {
    let text = fs::read_to_string(path).map_err(context(format!("cannot read {}", path.display())))?;
    let entries: Vec<ScriptEntry> =
        serde_json::from_str(&text).map_err(context(format!("invalid mock script {}", path.display())))?;
    Ok(MockBackend::scripted(entries.into_iter().map(|e| (e.contains, e.reply))))
}

fn gateway(cfg: &CliConfig, script: Option<&Path>) -> Result<Gateway, CliError> {
    match script {
        Some(path) => Gateway::new(cfg.model.clone(), Box::new(load_script(path)?)),
        None => Gateway::from_profile(cfg.model.clone()),
    }
    .map_err(context("model configuration"))
}

fn engine(cfg: &CliConfig, script: Option<&Path>) -> Result<QaEngine, CliError> {
    let embedder = embedder_from_profile(&cfg.embedder).map_err(context("embedder configuration"))?;
    let index = VectorIndex::open_or_create(&cfg.index_dir, embedder.dim())
        .map_err(context(format!("cannot open index {}", cfg.index_dir.display())))?;
    let options = QaOptions {
        grounding_threshold: cfg.grounding_threshold,
        chunking: cfg.chunking.clone(),
        ..QaOptions::default()
    };
    Ok(QaEngine::over(index, Arc::from(embedder), Arc::new(gateway(cfg, script)?), options))
}

pub fn ingest(cfg: &CliConfig, path: &Path) -> Result<Outcome, CliError> {
    let embedder = embedder_from_profile(&cfg.embedder).map_err(context("embedder configuration"))?;
    let _lock = IndexLock::acquire(&cfg.index_dir).map_err(CliError::fatal)?;
    let mut index = VectorIndex::open_or_create(&cfg.index_dir, embedder.dim())
        .map_err(context(format!("cannot open index {}", cfg.index_dir.display())))?;
    let mut store = DocumentStore::open(&cfg.store_dir).map_err(CliError::fatal)?;
    let summary = ingest_into(path, &mut store, &mut index, &*embedder, &cfg.chunking).map_err(|e| match e {
        IndexingError::Corpus(CorpusError::PathNotFound(p)) => CliError::Fatal(format!("path not found: {}", p.display())),
        other => CliError::fatal(other),
    })?;
    index.save(&cfg.index_dir).map_err(CliError::fatal)?;
    for f in &summary.failures {
        eprintln!("failed: {}: {}", f.path.display(), f.error);
    }
    println!("{} documents, {} chunks", summary.documents_added, summary.chunks_indexed);
    Ok(if summary.failures.is_empty() { Outcome::Done } else { Outcome::Partial })
}

pub fn ask(cfg: &CliConfig, script: Option<&Path>, question: &str, k: usize) -> Result<Outcome, CliError> {
    let engine = engine(cfg, script)?;
    let answer = engine.ask(question, k).map_err(|e| match e {
        PipelineError::Validation(m) => CliError::Usage(m),
        other => CliError::fatal(other),
    })?;
    println!("{}", answer.text);
    if !answer.sources.is_empty() {
        println!();
    }
    for s in &answer.sources {
        println!("[{}] {} ({}, {:.3})", s.rank, s.doc_title, s.chunk_id, s.score);
    }
    Ok(Outcome::Done)
}

/// `R.csv` for a single `k`, else `R.k<K>.csv` per `k`.
pub fn report_paths(output: &Path, ks: &[usize]) -> Vec<PathBuf> {
    if let [_] = ks {
        return vec![output.to_path_buf()];
    }
    let stem = output.file_stem().unwrap_or_default().to_string_lossy();
    let ext = output
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    ks.iter()
        .map(|k| output.with_file_name(format!("{stem}.k{k}{ext}")))
        .collect()
}

pub fn batch(
    cfg: &CliConfig,
    script: Option<&Path>,
    input: &Path,
    output: &Path,
    ks: &[usize],
    parallel: bool,
) -> Result<Outcome, CliError> {
    let engine = engine(cfg, script)?;
    let mut failed = false;
    for (&k, path) in ks.iter().zip(report_paths(output, ks)) {
        let summary = run_batch(input, k, &engine, &path, BatchOptions { parallel }).map_err(|e| match e {
            BatchError::Io(io) => CliError::Fatal(format!("{}: {io}", input.display())),
            other => CliError::fatal(other),
        })?;
        println!("{}: {} rows, {} errors", path.display(), summary.rows, summary.errors);
        failed |= summary.errors > 0;
    }
    Ok(if failed { Outcome::Partial } else { Outcome::Done })
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(context(format!("cannot open {}", path.display())))
}

pub fn grade(report: Option<&Path>, grades: &Path, format: TableFormat) -> Result<Outcome, CliError> {
    let records = read_grades(open(grades)?).map_err(context(grades.display()))?;
    if records.is_empty() {
        return Err(CliError::Fatal(format!("{}: no grades", grades.display())));
    }
    if let Some(report) = report {
        let rows = read_report(open(report)?).map_err(context(report.display()))?;
        let known: HashMap<(&str, &str, usize), &str> = rows
            .iter()
            .map(|r| ((r.id.as_str(), r.model_id.as_str(), r.k), r.category.as_str()))
            .collect();
        for g in &records {
            match known.get(&(g.id.as_str(), g.model_id.as_str(), g.k)) {
                None => {
                    return Err(CliError::Fatal(format!(
                        "grade for {} ({}, k={}) has no row in {}",
                        g.id,
                        g.model_id,
                        g.k,
                        report.display()
                    )))
                }
                Some(&cat) if cat != g.category => {
                    return Err(CliError::Fatal(format!(
                        "grade for {} says {:?} but the report says {cat:?}",
                        g.id, g.category
                    )))
                }
                Some(_) => {}
            }
        }
    }
    let table = aggregate(&records).map_err(CliError::fatal)?;
    print!("{}", render_table(&table, format));
    Ok(Outcome::Done)
}

fn kind_label(k: DiscrepancyKind) -> &'static str {
    match k {
        DiscrepancyKind::Missing => "missing",
        DiscrepancyKind::Wrong => "wrong",
        DiscrepancyKind::Spurious => "spurious",
    }
}

pub fn extract(
    cfg: &CliConfig,
    script: Option<&Path>,
    input: &Path,
    output: &Path,
    gold: Option<&Path>,
) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(input).map_err(context(format!("cannot read {}", input.display())))?;
    let gold = match gold {
        Some(g) => Some(read_records_csv(open(g)?).map_err(context(g.display()))?),
        None => None,
    };
    let mut pages: Vec<&str> = text.split('\u{c}').collect();
    if pages.len() > 1 && pages.last().is_some_and(|p| p.trim().is_empty()) {
        pages.pop();
    }
    let gateway = gateway(cfg, script)?;
    let run = extract_from_pages(&pages, &gateway);

    let out = File::create(output).map_err(context(format!("cannot create {}", output.display())))?;
    write_records_csv(BufWriter::new(out), &run.records).map_err(CliError::fatal)?;

    for (i, page) in run.pages.iter().enumerate() {
        match page {
            PageOutcome::Failed { stage, error } => eprintln!("page {i}: {stage} failed: {error}"),
            PageOutcome::Ok { skipped_rows, .. } => {
                for s in skipped_rows {
                    eprintln!("page {i}: skipped table line {}: {}", s.line, s.reason);
                }
            }
        }
    }
    for s in &run.suggestions {
        eprintln!(
            "page {}: {:?} may be {:?}",
            s.page, s.suggestion.full_name, s.suggestion.suggested_full_name
        );
    }
    for d in &run.gender_disagreements {
        eprintln!(
            "page {}: {} marked {} but the name suggests {}",
            d.page,
            d.full_name,
            d.model.as_str(),
            d.inferred.as_str()
        );
    }
    eprintln!(
        "{} records from {} pages, {} failed",
        run.records.len(),
        pages.len(),
        run.failed_pages()
    );

    if let Some(gold) = gold {
        let gold: Vec<_> = gold.into_iter().map(|r| r.record).collect();
        let got: Vec<_> = run.records.iter().map(|r| r.record.clone()).collect();
        let diff = diff_extraction(&gold, &got);
        let t = diff.totals();
        println!(
            "correct {}, missing {}, wrong {}, spurious {}",
            t.correct, t.missing, t.wrong, t.spurious
        );
        for d in &diff.discrepancies {
            println!(
                "{}\t{}\t{}\texpected {}\tgot {}",
                kind_label(d.kind),
                d.record,
                d.field.as_str(),
                d.expected.as_deref().unwrap_or("-"),
                d.got.as_deref().unwrap_or("-")
            );
        }
        for name in &diff.ambiguous {
            println!("ambiguous\t{name}");
        }
    }
    Ok(if run.failed_pages() == 0 { Outcome::Done } else { Outcome::Partial })
}

pub fn stats(cfg: &CliConfig) -> Result<Outcome, CliError> {
    let stats = if cfg.store_dir.join("manifest.json").exists() {
        corpus_stats(&DocumentStore::open(&cfg.store_dir).map_err(CliError::fatal)?)
    } else {
        CorpusStats::default()
    };
    println!("documents: {}", stats.document_count);
    println!("total words: {}", stats.total_words);
    println!("unique word forms: {}", stats.unique_word_forms);
    Ok(Outcome::Done)
}

pub fn show_config(cfg: &CliConfig) -> Result<Outcome, CliError> {
    print!("{}", toml::to_string(cfg).map_err(CliError::fatal)?);
    Ok(Outcome::Done)
}

async fn shutdown_signal() {
    let interrupt = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("cannot install SIGTERM handler");
        tokio::select! {
            _ = interrupt => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = interrupt.await;
    }
}

fn resolve_addr(host: &str, port: u16) -> Result<SocketAddr, CliError> {
    (host, port)
        .to_socket_addrs()
        .map_err(context(format!("cannot resolve {host}")))?
        .next()
        .ok_or_else(|| CliError::Fatal(format!("no address for {host}")))
}

pub fn serve(cfg: &CliConfig, script: Option<&Path>, args: &ServeArgs) -> Result<Outcome, CliError> {
    let addr = resolve_addr(&args.host, args.port)?;
    check_bind(&addr, args.allow_remote).map_err(CliError::fatal)?;
    let sessions = match &args.session_log {
        Some(p) => Sessions::with_log(p).map_err(context(format!("cannot open {}", p.display())))?,
        None => Sessions::new(),
    };
    let store = DocumentStore::open(&cfg.store_dir).map_err(CliError::fatal)?;
    // Built before the runtime starts: the HTTP clients are blocking.
    let state = Arc::new(
        AppState::new(engine(cfg, script)?, store, Some(cfg.index_dir.clone())).with_sessions(sessions),
    );
    let listener = std::net::TcpListener::bind(addr).map_err(context(format!("cannot bind {addr}")))?;
    listener.set_nonblocking(true).map_err(CliError::fatal)?;
    let local = listener.local_addr().map_err(CliError::fatal)?;
    let opts = RouterOptions {
        static_dir: args.static_dir.clone(),
        cors_origins: args.cors_origins.clone(),
    };
    let app = kleio_service::router(state.clone(), &opts);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::fatal)?;
    eprintln!("listening on http://{local}");
    let _ = io::stderr().flush();
    let served = rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        kleio_service::serve(listener, app, shutdown_signal()).await
    });
    drop(rt);
    drop(state);
    served.map_err(CliError::fatal)?;
    eprintln!("shut down");
    Ok(Outcome::Done)
}
