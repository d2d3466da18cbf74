//! Text embedding backends.
//!
//! [`HttpEmbedder`] speaks the common embeddings wire format
//! (`{"input": [...], "model": ...}` → `{"data": [{"embedding": [...], "index": i}]}`).
//! [`DeterministicEmbedder`] is a hashed bag-of-tokens embedder with no
//! model weights, used for offline runs and tests.

use std::thread;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;
use thiserror::Error;

pub const DEFAULT_DIM: usize = 384;
pub const HTTP_BATCH_SIZE: usize = 64;
pub const HTTP_RETRIES: u32 = 3;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("embedding backend misconfigured: {0}")]
    Config(String),
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. An all-zero input becomes `e_0`.
    pub fn normalized(values: &[f64]) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self::unit(values.len().max(1), 0);
        }
        EmbeddingVector {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
        }
    }

    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderBackend {
    Http,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderProfile {
    pub backend: EmbedderBackend,
    pub endpoint: Option<String>,
    pub model: String,
    pub dim: usize,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for EmbedderProfile {
    fn default() -> Self {
        EmbedderProfile {
            backend: EmbedderBackend::Deterministic,
            endpoint: None,
            model: "all-MiniLM-L6-v2".to_string(),
            dim: DEFAULT_DIM,
            timeout_secs: 30,
            max_in_flight: DEFAULT_IN_FLIGHT,
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Backend label reported by health checks.
    fn backend_name(&self) -> &'static str;

    /// One unit vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::BackendUnreachable("no vector returned".into()))
    }
}

/// Builds the embedder described by `profile`.
pub fn embedder_from_profile(profile: &EmbedderProfile) -> Result<Box<dyn Embedder>, EmbedError> {
    if profile.dim == 0 {
        return Err(EmbedError::Config("dim must be at least 1".into()));
    }
    match profile.backend {
        EmbedderBackend::Deterministic => Ok(Box::new(DeterministicEmbedder::new(profile.dim))),
        EmbedderBackend::Http => Ok(Box::new(HttpEmbedder::new(profile)?)),
    }
}

/// Embeds `texts` with the backend described by `profile`.
pub fn embed_texts(
    texts: &[&str],
    profile: &EmbedderProfile,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    embedder_from_profile(profile)?.embed(texts)
}

fn check_inputs(texts: &[&str]) -> Result<(), EmbedError> {
    if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
        return Err(EmbedError::EmptyInput);
    }
    Ok(())
}

/// 64-bit FNV-1a over the token's UTF-8 bytes.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Hashed bag-of-tokens embedding.
///
/// Tokens are the whitespace-separated pieces of the lowercased text. Each
/// adds `±1` to bucket `hash % dim`, signed by the hash's top bit. Empty
/// text yields `e_0`.
pub fn deterministic_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 1, "dim must be at least 1");
    let mut acc = vec![0.0f64; dim];
    for token in text.to_lowercase().split_whitespace() {
        let h = token_hash(token);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    EmbeddingVector::normalized(&acc)
}

#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dim: usize,
}

impl DeterministicEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dim must be at least 1");
        DeterministicEmbedder { dim }
    }
}

impl Embedder for DeterministicEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_name(&self) -> &'static str {
        "deterministic"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        Ok(texts
            .iter()
            .map(|t| deterministic_embed(t, self.dim))
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
    index: usize,
}

/// Client for an HTTP embeddings endpoint.
///
/// Requests are split into batches of [`HTTP_BATCH_SIZE`] with at most
/// `max_in_flight` batches outstanding. Transport failures and 5xx replies
/// are retried [`HTTP_RETRIES`] times with backoff doubling from 500 ms.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    dim: usize,
    max_in_flight: usize,
    backoff: Duration,
}

impl HttpEmbedder {
    pub fn new(profile: &EmbedderProfile) -> Result<Self, EmbedError> {
        let endpoint = profile
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("http embedder requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(HttpEmbedder {
            client,
            endpoint,
            model: profile.model.clone(),
            dim: profile.dim,
            max_in_flight: profile.max_in_flight.max(1),
            backoff: Duration::from_millis(500),
        })
    }

    /// Overrides the initial retry backoff.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn embed_batch(&self, batch: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = EmbedRequest {
            input: batch,
            model: &self.model,
        };
        let mut delay = self.backoff;
        let mut last_err = String::new();
        for attempt in 0..=HTTP_RETRIES {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            let resp = match self.client.post(&self.endpoint).json(&body).send() {
                Ok(r) => r,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() {
                last_err = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(EmbedError::BackendUnreachable(format!("HTTP {status}: {text}")));
            }
            let parsed: EmbedResponse = resp
                .json()
                .map_err(|e| EmbedError::BackendUnreachable(format!("bad response body: {e}")))?;
            return self.collect(batch.len(), parsed);
        }
        Err(EmbedError::BackendUnreachable(last_err))
    }

    fn collect(
        &self,
        expected: usize,
        mut parsed: EmbedResponse,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if parsed.data.len() != expected {
            return Err(EmbedError::BackendUnreachable(format!(
                "backend returned {} vectors for {expected} inputs",
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.iter().enumerate().any(|(i, d)| d.index != i) {
            return Err(EmbedError::BackendUnreachable(
                "response indices do not cover the request".into(),
            ));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: d.embedding.len(),
                    })
                } else {
                    Ok(EmbeddingVector::normalized(&d.embedding))
                }
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_name(&self) -> &'static str {
        "http"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        let batches: Vec<&[&str]> = texts.chunks(HTTP_BATCH_SIZE).collect();
        let mut out = Vec::with_capacity(texts.len());
        for group in batches.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, EmbedError>> = thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|batch| s.spawn(move || self.embed_batch(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_e0() {
        let v = deterministic_embed("", 8);
        assert_eq!(v, EmbeddingVector::unit(8, 0));
    }

    #[test]
    fn deterministic_is_stable_and_unit() {
        let a = deterministic_embed("The Land League was founded in 1879", 384);
        let b = deterministic_embed("The Land League was founded in 1879", 384);
        assert_eq!(a.values, b.values);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn token_order_and_multiplicity_do_not_change_direction() {
        let e = DeterministicEmbedder::new(384);
        let v = e.embed(&["aa bb", "bb aa"]).unwrap();
        assert_eq!(v[0], v[1]);
        let x = deterministic_embed("x x", 384);
        let y = deterministic_embed("x", 384);
        assert!((x.cosine(&y) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn case_is_folded() {
        assert_eq!(deterministic_embed("Famine", 64), deterministic_embed("famine", 64));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(token_hash(""), 0xcbf29ce484222325);
        assert_eq!(token_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(token_hash("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let e = DeterministicEmbedder::new(16);
        assert!(matches!(e.embed(&[]), Err(EmbedError::EmptyInput)));
        assert!(matches!(e.embed(&["ok", ""]), Err(EmbedError::EmptyInput)));
    }

    #[test]
    fn http_profile_requires_endpoint() {
        let profile = EmbedderProfile {
            backend: EmbedderBackend::Http,
            ..Default::default()
        };
        assert!(matches!(
            embedder_from_profile(&profile),
            Err(EmbedError::Config(_))
        ));
    }
}
