//! Question answering: retrieve, prompt, answer, attribute.
//!
//! [`QaEngine::ask`] embeds the question, retrieves up to `k` eligible
//! chunks, fits them into the model's context budget, calls the model and
//! returns the answer together with the sources actually shown to it and a
//! grounding score. [`run_batch`] does the same for every row of a question
//! CSV and writes a report CSV.

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::ChunkingConfig;
use crate::embedder::{EmbedError, Embedder};
use crate::llm_gateway::{prompt_tokens, Gateway, GatewayError, ModelProfile};
use crate::text::{content_tokens, split_sentences};
use crate::vector_index::{eligible, IndexError, SharedIndex, VectorIndex};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a research assistant for historians. Answer using the provided sources when given; if the sources and your knowledge are insufficient, say: I don't know the answer.";
pub const DEFAULT_GROUNDING_THRESHOLD: f64 = 0.15;
pub const SNIPPET_CHARS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Factual,
    Argumentative,
    Descriptive,
    Integrative,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Factual,
        Category::Argumentative,
        Category::Descriptive,
        Category::Integrative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Factual => "factual",
            Category::Argumentative => "argumentative",
            Category::Descriptive => "descriptive",
            Category::Integrative => "integrative",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown question category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid question: {0}")]
    Validation(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] IndexError),
    #[error("prompt does not fit: {0}")]
    Prompt(GatewayError),
    #[error("generation failed: {0}")]
    Generation(GatewayError),
}

impl PipelineError {
    /// Short stage label used in batch reports.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Validation(_) => "validation",
            PipelineError::Embedding(_) => "embedding",
            PipelineError::Retrieval(_) => "retrieval",
            PipelineError::Prompt(_) => "prompt",
            PipelineError::Generation(_) => "generation",
        }
    }

    /// True when a backend could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            PipelineError::Embedding(EmbedError::BackendUnreachable(_))
                | PipelineError::Generation(GatewayError::BackendUnreachable(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub question: String,
    pub context_chunks: Vec<ContextChunk>,
    pub user_text: String,
    pub token_estimate: usize,
}

fn render_user_text(question: &str, chunks: &[ContextChunk]) -> String {
    if chunks.is_empty() {
        return question.to_string();
    }
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        out.push_str(&format!("[SOURCE {}] {}\n\n", i + 1, c.text));
    }
    out.push_str("QUESTION: ");
    out.push_str(question);
    out
}

/// Assembles the prompt, dropping the lowest-scored sources until it fits
/// the profile's prompt budget. `hits` must be sorted by descending score.
pub fn build_prompt(
    system_text: &str,
    question: &str,
    hits: &[ContextChunk],
    profile: &ModelProfile,
) -> Result<PromptBundle, GatewayError> {
    let budget = profile.prompt_budget();
    for keep in (0..=hits.len()).rev() {
        let user_text = render_user_text(question, &hits[..keep]);
        let estimate = prompt_tokens(system_text, &user_text);
        if estimate <= budget {
            return Ok(PromptBundle {
                system_text: system_text.to_string(),
                question: question.to_string(),
                context_chunks: hits[..keep].to_vec(),
                user_text,
                token_estimate: estimate,
            });
        }
    }
    Err(GatewayError::ContextOverflow {
        estimate: prompt_tokens(system_text, question),
        budget,
    })
}

/// Mean over answer sentences of the best per-chunk share of the
/// sentence's content tokens (case-folded, four or more characters) found
/// in that chunk. Sentences without content tokens are skipped; an empty
/// context or an answer with no scorable sentence scores 0.
pub fn grounding_score(answer_text: &str, context_chunks: &[&str]) -> f64 {
    if context_chunks.is_empty() {
        return 0.0;
    }
    let chunk_tokens: Vec<_> = context_chunks.iter().map(|c| content_tokens(c)).collect();
    let mut total = 0.0;
    let mut sentences = 0usize;
    for sentence in split_sentences(answer_text) {
        let tokens = content_tokens(sentence);
        if tokens.is_empty() {
            continue;
        }
        let best = chunk_tokens
            .iter()
            .map(|ct| tokens.intersection(ct).count())
            .max()
            .unwrap_or(0);
        total += best as f64 / tokens.len() as f64;
        sentences += 1;
    }
    if sentences == 0 {
        0.0
    } else {
        total / sentences as f64
    }
}

/// A retrieved chunk that was included in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub chunk_id: String,
    pub doc_id: String,
    pub doc_title: String,
    pub score: f64,
    pub rank: usize,
    pub snippet: String,
    pub char_start: usize,
    pub char_end: usize,
    pub page_hint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub model_id: String,
    pub k_requested: usize,
    pub sources: Vec<SourceRef>,
    pub grounding_score: f64,
    pub grounded: bool,
    pub latency_secs: f64,
}

/// First [`SNIPPET_CHARS`] characters of `text` on one line.
pub fn snippet(text: &str) -> String {
    text.chars()
        .take(SNIPPET_CHARS)
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaOptions {
    pub system_text: String,
    pub grounding_threshold: f64,
    pub chunking: ChunkingConfig,
}

impl Default for QaOptions {
    fn default() -> Self {
        QaOptions {
            system_text: DEFAULT_SYSTEM_PROMPT.to_string(),
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            chunking: ChunkingConfig::default(),
        }
    }
}

/// Everything needed to answer questions against one index.
pub struct QaEngine {
    pub index: Arc<SharedIndex>,
    pub embedder: Arc<dyn Embedder>,
    pub gateway: Arc<Gateway>,
    pub options: QaOptions,
}

impl QaEngine {
    pub fn new(
        index: Arc<SharedIndex>,
        embedder: Arc<dyn Embedder>,
        gateway: Arc<Gateway>,
        options: QaOptions,
    ) -> Self {
        QaEngine {
            index,
            embedder,
            gateway,
            options,
        }
    }

    /// Convenience constructor over a plain index.
    pub fn over(
        index: VectorIndex,
        embedder: Arc<dyn Embedder>,
        gateway: Arc<Gateway>,
        options: QaOptions,
    ) -> Self {
        Self::new(Arc::new(SharedIndex::new(index)), embedder, gateway, options)
    }

    pub fn model_id(&self) -> &str {
        &self.gateway.profile().model_id
    }

    pub fn ask(&self, question: &str, k: usize) -> Result<Answer, PipelineError> {
        let started = Instant::now();
        let question = question.trim();
        if question.is_empty() {
            return Err(PipelineError::Validation("question is empty".into()));
        }
        let index = self.index.snapshot();
        let contexts = if k == 0 || index.is_empty() {
            Vec::new()
        } else {
            let query = self.embedder.embed_one(question)?;
            let cfg = &self.options.chunking;
            index
                .query_top_k(&query, k, |c| eligible(c, cfg))?
                .into_iter()
                .filter_map(|hit| {
                    index.chunk(&hit.chunk_id).map(|c| ContextChunk {
                        chunk_id: hit.chunk_id,
                        text: c.text.clone(),
                        score: hit.score,
                    })
                })
                .collect()
        };
        let prompt = build_prompt(
            &self.options.system_text,
            question,
            &contexts,
            self.gateway.profile(),
        )
        .map_err(PipelineError::Prompt)?;
        let exchange = self
            .gateway
            .complete(&prompt.system_text, &prompt.user_text)
            .map_err(|e| match e {
                GatewayError::ContextOverflow { .. } => PipelineError::Prompt(e),
                other => PipelineError::Generation(other),
            })?;
        let texts: Vec<&str> = prompt.context_chunks.iter().map(|c| c.text.as_str()).collect();
        let score = grounding_score(&exchange.answer_text, &texts);
        let sources = prompt
            .context_chunks
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                index.chunk(&c.chunk_id).map(|stored| SourceRef {
                    chunk_id: c.chunk_id.clone(),
                    doc_id: stored.doc_id.clone(),
                    doc_title: stored.doc_title.clone(),
                    score: c.score,
                    rank: i + 1,
                    snippet: snippet(&stored.text),
                    char_start: stored.char_start,
                    char_end: stored.char_end,
                    page_hint: stored.page_hint,
                })
            })
            .collect();
        Ok(Answer {
            text: exchange.answer_text,
            model_id: self.model_id().to_string(),
            k_requested: k,
            sources,
            grounding_score: score,
            grounded: score >= self.options.grounding_threshold,
            latency_secs: started.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRow {
    pub id: String,
    pub category: Category,
    pub question: String,
}

/// A row exactly as read from the question CSV, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawQuestionRow {
    pub id: String,
    pub category: String,
    pub question: String,
}

impl RawQuestionRow {
    pub fn validate(&self) -> Result<QuestionRow, PipelineError> {
        let category = self
            .category
            .trim()
            .parse::<Category>()
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        if self.question.trim().is_empty() {
            return Err(PipelineError::Validation("question is empty".into()));
        }
        Ok(QuestionRow {
            id: self.id.clone(),
            category,
            question: self.question.clone(),
        })
    }
}

/// One source column of the report: `doc_title|chunk_id|score|snippet`
/// with `\` and `|` backslash-escaped inside fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCell {
    pub doc_title: String,
    pub chunk_id: String,
    pub score: f64,
    pub snippet: String,
}

fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('|', "\\|")
}

impl fmt::Display for SourceCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}",
            escape_field(&self.doc_title),
            escape_field(&self.chunk_id),
            self.score,
            escape_field(&self.snippet)
        )
    }
}

impl FromStr for SourceCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = vec![String::new()];
        let mut chars = s.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some(next @ ('\\' | '|')) => fields.last_mut().unwrap().push(next),
                    other => return Err(format!("bad escape {other:?} in source cell")),
                },
                '|' => fields.push(String::new()),
                c => fields.last_mut().unwrap().push(c),
            }
        }
        let [doc_title, chunk_id, score, snippet]: [String; 4] = fields
            .try_into()
            .map_err(|f: Vec<String>| format!("source cell has {} fields, expected 4", f.len()))?;
        Ok(SourceCell {
            doc_title,
            chunk_id,
            score: score.parse().map_err(|e| format!("bad score {score:?}: {e}"))?,
            snippet,
        })
    }
}

impl From<&SourceRef> for SourceCell {
    fn from(s: &SourceRef) -> Self {
        SourceCell {
            doc_title: s.doc_title.clone(),
            chunk_id: s.chunk_id.clone(),
            score: s.score,
            snippet: s.snippet.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub category: String,
    pub question: String,
    pub answer: String,
    pub model_id: String,
    pub k: usize,
    pub grounding_score: f64,
    /// At most `k` cells; shorter lists are padded with empty columns.
    pub sources: Vec<SourceCell>,
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("malformed question CSV: {0}")]
    InputCsvMalformed(String),
    #[error("malformed report CSV: {0}")]
    ReportMalformed(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

const QUESTION_HEADER: [&str; 3] = ["id", "category", "question"];

/// Parses question CSV text. The header row `id,category,question` is
/// required.
pub fn parse_questions(input: impl Read) -> Result<Vec<RawQuestionRow>, BatchError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| BatchError::InputCsvMalformed(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    if names != QUESTION_HEADER {
        return Err(BatchError::InputCsvMalformed(format!(
            "expected header id,category,question, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| BatchError::InputCsvMalformed(e.to_string())))
        .collect()
}

pub fn report_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "id",
        "category",
        "question",
        "answer",
        "model_id",
        "k",
        "grounding_score",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=k).map(|i| format!("source_{i}")));
    h
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Writes report rows for a given `k` as RFC-4180 CSV with LF endings.
pub fn write_report<W: Write>(out: W, k: usize, rows: &[ReportRow]) -> Result<(), BatchError> {
    let mut w = csv_writer(out);
    let map = |e: csv::Error| BatchError::Io(io::Error::other(e));
    w.write_record(report_header(k)).map_err(map)?;
    for row in rows {
        let mut rec = vec![
            row.id.clone(),
            row.category.clone(),
            row.question.clone(),
            row.answer.clone(),
            row.model_id.clone(),
            row.k.to_string(),
            row.grounding_score.to_string(),
        ];
        for i in 0..k {
            rec.push(row.sources.get(i).map(ToString::to_string).unwrap_or_default());
        }
        w.write_record(&rec).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a report written by [`write_report`].
pub fn read_report(input: impl Read) -> Result<Vec<ReportRow>, BatchError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let bad = |e: String| BatchError::ReportMalformed(e);
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let k = headers.len().checked_sub(7).ok_or_else(|| bad("too few columns".into()))?;
    if headers.iter().map(str::to_string).collect::<Vec<_>>() != report_header(k) {
        return Err(bad("unexpected report header".into()));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let sources = (7..7 + k)
            .map(|i| &rec[i])
            .filter(|c| !c.is_empty())
            .map(|c| c.parse::<SourceCell>().map_err(&bad))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(ReportRow {
            id: rec[0].to_string(),
            category: rec[1].to_string(),
            question: rec[2].to_string(),
            answer: rec[3].to_string(),
            model_id: rec[4].to_string(),
            k: rec[5].parse().map_err(|e| bad(format!("k: {e}")))?,
            grounding_score: rec[6].parse().map_err(|e| bad(format!("grounding_score: {e}")))?,
            sources,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub rows: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchOptions {
    /// Answer rows concurrently; report order is unchanged.
    pub parallel: bool,
}

fn answer_row(engine: &QaEngine, raw: &RawQuestionRow, k: usize) -> (ReportRow, bool) {
    let result = raw.validate().and_then(|q| engine.ask(&q.question, k));
    let (answer, grounding, sources, ok) = match result {
        Ok(a) => (
            a.text,
            a.grounding_score,
            a.sources.iter().map(SourceCell::from).collect(),
            true,
        ),
        Err(e) => {
            tracing::warn!(id = %raw.id, stage = e.stage(), error = %e, "batch row failed");
            (format!("ERROR: {}", e.stage()), 0.0, Vec::new(), false)
        }
    };
    (
        ReportRow {
            id: raw.id.clone(),
            category: raw.category.clone(),
            question: raw.question.clone(),
            answer,
            model_id: engine.model_id().to_string(),
            k,
            grounding_score: grounding,
            sources,
        },
        ok,
    )
}

/// Answers every row of `rows`; failing rows become `ERROR: <stage>` rows.
pub fn answer_rows(
    engine: &QaEngine,
    rows: &[RawQuestionRow],
    k: usize,
    opts: BatchOptions,
) -> (Vec<ReportRow>, BatchSummary) {
    let results: Vec<(ReportRow, bool)> = if opts.parallel {
        rows.par_iter().map(|r| answer_row(engine, r, k)).collect()
    } else {
        rows.iter().map(|r| answer_row(engine, r, k)).collect()
    };
    let errors = results.iter().filter(|(_, ok)| !ok).count();
    let summary = BatchSummary {
        rows: results.len(),
        errors,
    };
    (results.into_iter().map(|(r, _)| r).collect(), summary)
}

/// Reads questions from `questions_csv`, answers them with `k` chunks each
/// and writes the report to `report_csv`.
pub fn run_batch(
    questions_csv: &Path,
    k: usize,
    engine: &QaEngine,
    report_csv: &Path,
    opts: BatchOptions,
) -> Result<BatchSummary, BatchError> {
    let input = File::open(questions_csv)?;
    let rows = parse_questions(input)?;
    let (report, summary) = answer_rows(engine, &rows, k, opts);
    let out = io::BufWriter::new(File::create(report_csv)?);
    write_report(out, k, &report)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: &str, text: &str, score: f64) -> ContextChunk {
        ContextChunk {
            chunk_id: id.into(),
            text: text.into(),
            score,
        }
    }

    #[test]
    fn zero_hits_prompt_is_bare_question() {
        let p = build_prompt("sys", "What is transnationalism?", &[], &ModelProfile::default())
            .unwrap();
        assert_eq!(p.user_text, "What is transnationalism?");
        assert!(!p.user_text.contains("[SOURCE"));
    }

    #[test]
    fn sources_are_numbered_in_order() {
        let hits: Vec<_> = (0..4)
            .map(|i| ctx(&format!("d:{i}"), &format!("text {i}"), 1.0 - i as f64 / 10.0))
            .collect();
        let p = build_prompt("sys", "q?", &hits, &ModelProfile::default()).unwrap();
        assert_eq!(p.context_chunks.len(), 4);
        assert_eq!(
            p.user_text,
            "[SOURCE 1] text 0\n\n[SOURCE 2] text 1\n\n[SOURCE 3] text 2\n\n[SOURCE 4] text 3\n\nQUESTION: q?"
        );
    }

    #[test]
    fn overflow_drops_lowest_scored_sources() {
        let profile = ModelProfile {
            context_tokens: 1200,
            max_answer_tokens: 512,
            ..Default::default()
        };
        let hits: Vec<_> = (0..8)
            .map(|i| ctx(&format!("d:{i}"), &"w".repeat(1000), 1.0 - i as f64 / 10.0))
            .collect();
        let p = build_prompt("sys", "q?", &hits, &profile).unwrap();
        assert!(p.token_estimate <= profile.prompt_budget());
        assert!(p.context_chunks.len() < 8);
        let kept: Vec<_> = p.context_chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        let want: Vec<_> = hits[..kept.len()].iter().map(|c| c.chunk_id.as_str()).collect();
        assert_eq!(kept, want);
        let with_one_more = render_user_text("q?", &hits[..kept.len() + 1]);
        assert!(prompt_tokens("sys", &with_one_more) > profile.prompt_budget());
    }

    #[test]
    fn oversized_bare_question_overflows() {
        let profile = ModelProfile::default();
        let q = "q".repeat(profile.prompt_budget() * 4 + 8);
        assert!(matches!(
            build_prompt("", &q, &[], &profile),
            Err(GatewayError::ContextOverflow { .. })
        ));
    }

    #[test]
    fn grounding_examples() {
        let chunk = "The Land League was founded in Castlebar in 1879. Rents were high.";
        assert_eq!(
            grounding_score("The Land League was founded in Castlebar in 1879.", &[chunk]),
            1.0
        );
        assert_eq!(grounding_score("Oceans harbour whales.", &[chunk]), 0.0);
        assert_eq!(
            grounding_score(
                "The Land League was founded in Castlebar in 1879. Oceans harbour whales.",
                &[chunk]
            ),
            0.5
        );
        assert_eq!(grounding_score("anything at all here", &[]), 0.0);
    }

    #[test]
    fn source_cell_escaping_round_trips() {
        let cell = SourceCell {
            doc_title: "A|B \\ C".into(),
            chunk_id: "abc:1".into(),
            score: 0.123456789,
            snippet: "pipes | and \\ slashes".into(),
        };
        let text = cell.to_string();
        assert_eq!(text.matches('|').count() - text.matches("\\|").count(), 3);
        assert_eq!(text.parse::<SourceCell>().unwrap(), cell);
        assert!("a|b|c".parse::<SourceCell>().is_err());
    }

    #[test]
    fn question_csv_requires_header() {
        let ok = "id,category,question\nf1,factual,\"When, exactly?\"\n";
        let rows = parse_questions(ok.as_bytes()).unwrap();
        assert_eq!(rows[0].question, "When, exactly?");
        let missing = "f1,factual,When did it start?\n";
        assert!(matches!(
            parse_questions(missing.as_bytes()),
            Err(BatchError::InputCsvMalformed(_))
        ));
    }

    #[test]
    fn category_parsing_is_exact() {
        assert_eq!("factual".parse::<Category>().unwrap(), Category::Factual);
        assert!("Factual".parse::<Category>().is_err());
        assert!("opinion".parse::<Category>().is_err());
    }
}
