//! Chat completion over pluggable backends.
//!
//! The gateway owns the context budget: a request whose estimated prompt
//! size exceeds `context_tokens - max_answer_tokens` is rejected before
//! anything is sent. Token counts use the `ceil(chars / 4)` heuristic.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::text::{split_sentences, word_tokens};

pub const ABSTENTION: &str = "I don't know the answer.";
pub const DEFAULT_TEMPERATURE: f64 = 1e-5;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 2;
const CHAT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt needs ~{estimate} tokens but the budget is {budget}")]
    ContextOverflow { estimate: usize, budget: usize },
    #[error("model backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("model backend error (HTTP {status}): {body}")]
    BackendError { status: u16, body: String },
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelProfile {
    pub model_id: String,
    pub context_tokens: usize,
    /// Chat completions URL, or `"mock"`.
    pub endpoint: String,
    pub temperature: f64,
    pub max_answer_tokens: usize,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ModelProfile {
    fn default() -> Self {
        ModelProfile {
            model_id: "mock".to_string(),
            context_tokens: 4096,
            endpoint: "mock".to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_answer_tokens: 512,
            api_key: None,
            timeout_secs: 120,
        }
    }
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.context_tokens <= self.max_answer_tokens {
            return Err(GatewayError::InvalidProfile(format!(
                "context_tokens ({}) must exceed max_answer_tokens ({})",
                self.context_tokens, self.max_answer_tokens
            )));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidProfile(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Tokens available to the prompt.
    pub fn prompt_budget(&self) -> usize {
        self.context_tokens.saturating_sub(self.max_answer_tokens)
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }
}

/// `ceil(chars / 4)`, a rough upper bound on tokenizer output.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Estimate for a system + user message pair.
pub fn prompt_tokens(system_text: &str, user_text: &str) -> usize {
    estimate_tokens(system_text) + estimate_tokens(user_text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub answer_text: String,
    pub prompt_token_estimate: usize,
    pub latency_secs: f64,
}

pub trait ChatBackend: Send + Sync {
    /// `"mock"` or `"http"`.
    fn name(&self) -> &'static str;

    fn send(
        &self,
        profile: &ModelProfile,
        system_text: &str,
        user_text: &str,
    ) -> Result<String, GatewayError>;
}

/// Counting semaphore bounding concurrent backend calls.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().expect("permit lock poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("permit lock poisoned");
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    profile: ModelProfile,
    backend: Box<dyn ChatBackend>,
    permits: Permits,
    seen: Mutex<HashMap<u64, String>>,
    nondeterministic: Mutex<usize>,
}

impl Gateway {
    pub fn new(profile: ModelProfile, backend: Box<dyn ChatBackend>) -> Result<Self, GatewayError> {
        profile.validate()?;
        Ok(Gateway {
            profile,
            backend,
            permits: Permits::new(DEFAULT_MAX_IN_FLIGHT),
            seen: Mutex::new(HashMap::new()),
            nondeterministic: Mutex::new(0),
        })
    }

    /// Builds the HTTP backend for a URL endpoint, or a corpus-aware mock
    /// for `"mock"`.
    pub fn from_profile(profile: ModelProfile) -> Result<Self, GatewayError> {
        let backend: Box<dyn ChatBackend> = if profile.is_mock() {
            Box::new(MockBackend::corpus_aware())
        } else {
            Box::new(HttpChatBackend::new(&profile)?)
        };
        Self::new(profile, backend)
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.permits = Permits::new(n);
        self
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    /// Number of repeated prompts that received a different answer.
    pub fn nondeterminism_events(&self) -> usize {
        *self.nondeterministic.lock().expect("lock poisoned")
    }

    /// Sends one exchange. Only trailing whitespace is stripped from the
    /// answer.
    pub fn complete(&self, system_text: &str, user_text: &str) -> Result<ChatExchange, GatewayError> {
        let estimate = prompt_tokens(system_text, user_text);
        let budget = self.profile.prompt_budget();
        if estimate > budget {
            return Err(GatewayError::ContextOverflow { estimate, budget });
        }
        let started = Instant::now();
        let answer = {
            let _permit = self.permits.acquire();
            self.backend.send(&self.profile, system_text, user_text)?
        };
        let answer_text = answer.trim_end().to_string();
        self.note_answer(system_text, user_text, &answer_text);
        Ok(ChatExchange {
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            answer_text,
            prompt_token_estimate: estimate,
            latency_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn note_answer(&self, system_text: &str, user_text: &str, answer: &str) {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (system_text, user_text).hash(&mut h);
        let key = h.finish();
        let mut seen = self.seen.lock().expect("lock poisoned");
        match seen.get(&key) {
            Some(prev) if prev != answer => {
                warn!(
                    model = %self.profile.model_id,
                    temperature = self.profile.temperature,
                    "identical prompt produced a different answer"
                );
                *self.nondeterministic.lock().expect("lock poisoned") += 1;
            }
            Some(_) => {}
            None => {
                seen.insert(key, answer.to_string());
            }
        }
    }
}

/// Deterministic stand-in for a chat model.
///
/// Scripted entries are checked first, in insertion order: the first key
/// contained in the user text wins. Otherwise, in corpus-aware mode, the
/// reply is the source sentence sharing the most content tokens with the
/// question (see [`mock_answer`]); without it the mock abstains.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: Vec<(String, String)>,
    corpus_aware: bool,
}

impl MockBackend {
    pub fn corpus_aware() -> Self {
        MockBackend {
            script: Vec::new(),
            corpus_aware: true,
        }
    }

    pub fn scripted<K: Into<String>, V: Into<String>>(
        entries: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        MockBackend {
            script: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            corpus_aware: false,
        }
    }

    pub fn with_corpus_awareness(mut self, on: bool) -> Self {
        self.corpus_aware = on;
        self
    }

    pub fn push(&mut self, key: impl Into<String>, answer: impl Into<String>) {
        self.script.push((key.into(), answer.into()));
    }

    pub fn reply(&self, user_text: &str) -> String {
        if let Some((_, answer)) = self.script.iter().find(|(k, _)| user_text.contains(k.as_str())) {
            return answer.clone();
        }
        if self.corpus_aware {
            mock_answer(user_text)
        } else {
            ABSTENTION.to_string()
        }
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn send(&self, _: &ModelProfile, _: &str, user_text: &str) -> Result<String, GatewayError> {
        Ok(self.reply(user_text))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "can", "did", "do", "does", "for",
    "from", "had", "has", "have", "how", "in", "is", "it", "its", "of", "on", "or", "that", "the",
    "their", "there", "this", "to", "was", "were", "what", "when", "where", "which", "who", "why",
    "with", "you", "your",
];

/// Lowercased, stopword-free, lightly stemmed word tokens.
pub fn mock_content_tokens(text: &str) -> Vec<String> {
    word_tokens(text)
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

fn stem(token: &str) -> String {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(base) = token.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base.to_string();
            }
        }
    }
    token.to_string()
}

/// Splits a prompt built by the QA template into `(sources, question)`.
///
/// Sources are the `[SOURCE i]` blocks; a prompt without a `QUESTION:` line
/// is a bare question with no sources.
pub fn parse_qa_prompt(user_text: &str) -> (Vec<&str>, &str) {
    let Some(q_at) = user_text.rfind("QUESTION: ") else {
        return (Vec::new(), user_text.trim());
    };
    let question = user_text[q_at + "QUESTION: ".len()..].trim();
    let body = &user_text[..q_at];
    let mut sources = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("[SOURCE ") {
        let after = &rest[start..];
        let Some(close) = after.find("] ") else { break };
        let text_start = close + 2;
        let next = after[text_start..]
            .find("\n\n[SOURCE ")
            .map_or(after.len(), |n| text_start + n);
        sources.push(after[text_start..next].trim());
        rest = &after[next..];
    }
    (sources, question)
}

/// Corpus-aware mock policy: the source sentence with the largest content
/// token overlap with the question, earliest first on ties, or
/// [`ABSTENTION`] when no source shares at least two content tokens with
/// the question.
pub fn mock_answer(user_text: &str) -> String {
    let (sources, question) = parse_qa_prompt(user_text);
    let q_tokens: std::collections::BTreeSet<String> =
        mock_content_tokens(question).into_iter().collect();
    let mut best: Option<(usize, &str)> = None;
    let mut any_source_qualifies = false;
    for source in sources {
        let s_tokens: std::collections::BTreeSet<String> =
            mock_content_tokens(source).into_iter().collect();
        if s_tokens.intersection(&q_tokens).count() >= 2 {
            any_source_qualifies = true;
        }
        for sentence in split_sentences(source) {
            let overlap = mock_content_tokens(sentence)
                .into_iter()
                .collect::<std::collections::BTreeSet<_>>()
                .intersection(&q_tokens)
                .count();
            if best.is_none_or(|(score, _)| overlap > score) {
                best = Some((overlap, sentence));
            }
        }
    }
    match best {
        Some((score, sentence)) if any_source_qualifies && score > 0 => sentence.to_string(),
        _ => ABSTENTION.to_string(),
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: usize,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Client for an OpenAI-style chat completions endpoint.
///
/// Transport failures and 5xx replies are retried twice; 4xx replies fail
/// immediately with the body captured.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    backoff: Duration,
}

impl HttpChatBackend {
    pub fn new(profile: &ModelProfile) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidProfile(e.to_string()))?;
        Ok(HttpChatBackend {
            client,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &'static str {
        "http"
    }

    fn send(
        &self,
        profile: &ModelProfile,
        system_text: &str,
        user_text: &str,
    ) -> Result<String, GatewayError> {
        let mut messages = Vec::with_capacity(2);
        if !system_text.is_empty() {
            messages.push(ChatMessage {
                role: "system",
                content: system_text,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: user_text,
        });
        let body = ChatRequest {
            model: &profile.model_id,
            temperature: profile.temperature,
            max_tokens: profile.max_answer_tokens,
            messages,
        };
        let mut delay = self.backoff;
        let mut last_err = String::new();
        for attempt in 0..=CHAT_RETRIES {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.client.post(&profile.endpoint).json(&body);
            if let Some(key) = &profile.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if !status.is_success() {
                let body = resp.text().unwrap_or_default();
                if status.is_server_error() && attempt < CHAT_RETRIES {
                    last_err = format!("HTTP {status}");
                    continue;
                }
                return Err(GatewayError::BackendError {
                    status: status.as_u16(),
                    body,
                });
            }
            let parsed: ChatResponse = resp
                .json()
                .map_err(|e| GatewayError::BackendUnreachable(format!("bad response body: {e}")))?;
            return parsed
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| GatewayError::BackendUnreachable("response has no choices".into()));
        }
        Err(GatewayError::BackendUnreachable(last_err))
    }
}
