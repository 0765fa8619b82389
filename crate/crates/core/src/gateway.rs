//! HTTP clients for the four endpoint roles.
//!
//! Generation and judge calls use the OpenAI-compatible completions protocol
//! (`/v1/completions` for text prompts, `/v1/chat/completions` for message
//! lists). Embeddings use `/v1/embeddings`; reranking uses the harness
//! schema `POST /rerank {query, passages} -> {scores}`.
//!
//! Each [`Client`] bounds in-flight requests with a semaphore and retries
//! transport errors, 429 and 5xx with exponential backoff. The jitter is
//! derived from the request body so reruns wait the same amounts.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::hashing::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generation,
    Embedding,
    Rerank,
    Judge,
}

impl Role {
    pub fn env_prefix(self) -> &'static str {
        match self {
            Role::Generation => "CTXGENIE_GENERATION",
            Role::Embedding => "CTXGENIE_EMBEDDING",
            Role::Rerank => "CTXGENIE_RERANK",
            Role::Judge => "CTXGENIE_JUDGE",
        }
    }

    pub fn default_timeout(self) -> Duration {
        match self {
            Role::Generation => Duration::from_secs(120),
            _ => Duration::from_secs(30),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{role:?} endpoint {url}: transport error after {attempts} attempt(s): {message}")]
    Transport {
        role: Role,
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{role:?} endpoint {url}: HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        role: Role,
        url: String,
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("context window exceeded: {0}")]
    ContextOverflow(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("profile role is {actual:?}, call needs {expected:?}")]
    WrongRole { expected: Role, actual: Role },
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("expected {expected} items, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn is_context_overflow(&self) -> bool {
        matches!(self, GatewayError::ContextOverflow(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointProfile {
    pub base_url: String,
    pub role: Role,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default, with = "opt_secs")]
    pub timeout: Option<Duration>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_retries() -> u32 {
    2
}
fn default_parallel() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    200
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

impl EndpointProfile {
    pub fn new(base_url: impl Into<String>, role: Role, model: impl Into<String>) -> Self {
        EndpointProfile {
            base_url: base_url.into(),
            role,
            model: model.into(),
            token_env: None,
            timeout: None,
            max_retries: default_retries(),
            max_parallel: default_parallel(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    /// Profile from `CTXGENIE_<ROLE>_URL` (and `_TOKEN`), if the URL is set.
    pub fn from_env(role: Role, model: &str) -> Option<Self> {
        Self::from_env_prefix(role.env_prefix(), role, model)
    }

    pub fn from_env_prefix(prefix: &str, role: Role, model: &str) -> Option<Self> {
        let url = std::env::var(format!("{prefix}_URL")).ok()?;
        let mut p = Self::new(url, role, model);
        p.token_env = Some(format!("{prefix}_TOKEN"));
        Some(p)
    }

    pub fn effective_timeout(&self) -> Duration {
        self.timeout.unwrap_or_else(|| self.role.default_timeout())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel == 0 {
            return Err(format!("{:?} profile: max_parallel must be >= 1", self.role));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("{:?} profile: base_url must be http(s): {}", self.role, self.base_url));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptInput {
    Text(String),
    Chat(Vec<ChatMessage>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub input: PromptInput,
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub max_new_tokens: u32,
    pub n_samples: u32,
    pub stop: Option<Vec<String>>,
    pub seed: Option<u64>,
}

/// Sampling parameters without the prompt, used in fingerprints and configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SamplingParams {
    /// Context generation: temperature 0.9, frequency penalty 1.95, 512 tokens.
    pub fn context_generation() -> Self {
        SamplingParams {
            temperature: 0.9,
            frequency_penalty: 1.95,
            max_new_tokens: 512,
            seed: Some(0),
        }
    }

    /// Greedy reading.
    pub fn greedy(max_new_tokens: u32) -> Self {
        SamplingParams {
            temperature: 0.0,
            frequency_penalty: 0.0,
            max_new_tokens,
            seed: None,
        }
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: &SamplingParams, n: u32) -> Self {
        GenerationRequest {
            input: PromptInput::Text(prompt.into()),
            temperature: params.temperature,
            frequency_penalty: params.frequency_penalty,
            max_new_tokens: params.max_new_tokens,
            n_samples: n,
            stop: None,
            seed: params.seed,
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0 && self.n_samples == 1
    }

    fn body(&self, model: &str) -> Value {
        let mut body = json!({
            "model": model,
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "max_tokens": self.max_new_tokens,
            "n": self.n_samples,
        });
        match &self.input {
            PromptInput::Text(p) => body["prompt"] = json!(p),
            PromptInput::Chat(m) => body["messages"] = json!(m),
        }
        if let Some(stop) = &self.stop {
            body["stop"] = json!(stop);
        }
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

/// Per-client counters.
#[derive(Debug, Default)]
pub struct Metrics {
    pub calls: AtomicU64,
    pub attempts: AtomicU64,
    pub retries: AtomicU64,
    pub failures: AtomicU64,
    pub latency_ms_total: AtomicU64,
    pub prompt_tokens: AtomicU64,
    pub completion_tokens: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
    pub latency_ms_total: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Metrics {
    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            latency_ms_total: self.latency_ms_total.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

/// Completion texts plus call metadata.
#[derive(Debug, Clone)]
pub struct Completion {
    pub texts: Vec<String>,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Clone)]
pub struct Client {
    pub profile: EndpointProfile,
    http: reqwest::Client,
    sem: Arc<Semaphore>,
    metrics: Arc<Metrics>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("profile", &self.profile).finish()
    }
}

fn is_overflow_body(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context_length_exceeded") || b.contains("maximum context length")
}

/// Deterministic jitter fraction in [0, 0.5) from the request body and attempt.
fn jitter(body: &str, attempt: u32) -> f64 {
    let h = sha256_hex(format!("{attempt}:{body}").as_bytes());
    let x = u32::from_str_radix(&h[..8], 16).unwrap();
    (x as f64 / u32::MAX as f64) * 0.5
}

pub fn backoff_delay(base_ms: u64, attempt: u32, body: &str) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << attempt.min(16));
    Duration::from_millis((exp as f64 * (1.0 + jitter(body, attempt))) as u64)
}

impl Client {
    pub fn new(profile: EndpointProfile) -> Result<Self, GatewayError> {
        profile.validate().map_err(GatewayError::InvalidRequest)?;
        let http = reqwest::Client::builder()
            .timeout(profile.effective_timeout())
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        Ok(Client {
            sem: Arc::new(Semaphore::new(profile.max_parallel)),
            profile,
            http,
            metrics: Arc::new(Metrics::default()),
        })
    }

    pub fn profile(&self) -> &EndpointProfile {
        &self.profile
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    fn require(&self, roles: &[Role]) -> Result<(), GatewayError> {
        if roles.contains(&self.profile.role) {
            Ok(())
        } else {
            Err(GatewayError::WrongRole {
                expected: roles[0],
                actual: self.profile.role,
            })
        }
    }

    /// POST JSON with retries. Returns the parsed body and the attempt count.
    async fn post(&self, path: &str, body: &Value) -> Result<(Value, u32), GatewayError> {
        let url = self.profile.url(path);
        let body_text = body.to_string();
        let token = self
            .profile
            .token_env
            .as_ref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty());
        self.metrics.calls.fetch_add(1, Ordering::Relaxed);
        let max_attempts = self.profile.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.metrics.attempts.fetch_add(1, Ordering::Relaxed);
            let outcome = {
                let _permit = self.sem.acquire().await.expect("semaphore open");
                let mut req = self
                    .http
                    .post(&url)
                    .header("content-type", "application/json")
                    .body(body_text.clone());
                if let Some(t) = &token {
                    req = req.bearer_auth(t);
                }
                match req.send().await {
                    Ok(resp) => {
                        let status = resp.status().as_u16();
                        let text = resp.text().await.unwrap_or_default();
                        Ok((status, text))
                    }
                    Err(e) => Err(e.to_string()),
                }
            };
            let retryable = match &outcome {
                Ok((status, text)) if (200..300).contains(status) => {
                    let v: Value = serde_json::from_str(text)
                        .map_err(|e| GatewayError::Malformed(format!("{url}: {e}")))?;
                    return Ok((v, attempt));
                }
                Ok((400, text)) if is_overflow_body(text) => {
                    self.metrics.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(GatewayError::ContextOverflow(text.clone()));
                }
                Ok((status, _)) => *status == 429 || *status >= 500,
                Err(_) => true,
            };
            if !retryable || attempt >= max_attempts {
                self.metrics.failures.fetch_add(1, Ordering::Relaxed);
                return Err(match outcome {
                    Ok((status, body)) => GatewayError::Status {
                        role: self.profile.role,
                        url,
                        status,
                        attempts: attempt,
                        body,
                    },
                    Err(message) => GatewayError::Transport {
                        role: self.profile.role,
                        url,
                        attempts: attempt,
                        message,
                    },
                });
            }
            self.metrics.retries.fetch_add(1, Ordering::Relaxed);
            tracing::debug!(attempt, url = %url, "retrying");
            tokio::time::sleep(backoff_delay(self.profile.backoff_base_ms, attempt - 1, &body_text)).await;
        }
    }

    /// Exactly `n_samples` completion texts.
    pub async fn complete(&self, req: &GenerationRequest) -> Result<Completion, GatewayError> {
        self.require(&[Role::Generation, Role::Judge])?;
        if req.n_samples == 0 || req.max_new_tokens == 0 {
            return Err(GatewayError::InvalidRequest("n_samples and max_new_tokens must be positive".into()));
        }
        let path = match req.input {
            PromptInput::Text(_) => "/v1/completions",
            PromptInput::Chat(_) => "/v1/chat/completions",
        };
        let start = Instant::now();
        let (v, attempts) = self.post(path, &req.body(&self.profile.model)).await?;
        let latency = start.elapsed();
        self.metrics
            .latency_ms_total
            .fetch_add(latency.as_millis() as u64, Ordering::Relaxed);
        if let Some(u) = v.get("usage") {
            let get = |k: &str| u.get(k).and_then(Value::as_u64).unwrap_or(0);
            self.metrics.prompt_tokens.fetch_add(get("prompt_tokens"), Ordering::Relaxed);
            self.metrics
                .completion_tokens
                .fetch_add(get("completion_tokens"), Ordering::Relaxed);
        }
        let texts = parse_choices(&v)?;
        if texts.len() != req.n_samples as usize {
            return Err(GatewayError::LengthMismatch {
                expected: req.n_samples as usize,
                got: texts.len(),
            });
        }
        tracing::debug!(latency_ms = latency.as_millis() as u64, attempts, "completion");
        Ok(Completion {
            texts,
            latency,
            attempts,
        })
    }

    /// Unit-norm embeddings, one per text.
    pub async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.require(&[Role::Embedding])?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let (v, _) = self
            .post("/v1/embeddings", &json!({"model": self.profile.model, "input": texts}))
            .await?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("missing `data`".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::LengthMismatch {
                expected: texts.len(),
                got: data.len(),
            });
        }
        let mut out: Vec<Vec<f32>> = Vec::with_capacity(data.len());
        for d in data {
            let e = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::Malformed("missing `embedding`".into()))?;
            let v: Vec<f32> = e
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| GatewayError::Malformed("non-numeric embedding".into()))?;
            if let Some(first) = out.first() {
                if first.len() != v.len() {
                    return Err(GatewayError::DimensionMismatch(first.len(), v.len()));
                }
            }
            out.push(normalize(v)?);
        }
        Ok(out)
    }

    /// One relevance score per passage, in input order.
    pub async fn rerank_score(&self, query: &str, passages: &[String]) -> Result<Vec<f32>, GatewayError> {
        self.require(&[Role::Rerank])?;
        if passages.is_empty() {
            return Err(GatewayError::InvalidRequest("rerank needs at least one passage".into()));
        }
        let (v, _) = self
            .post("/rerank", &json!({"query": query, "passages": passages}))
            .await?;
        let scores: Vec<f32> = v
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("missing `scores`".into()))?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| GatewayError::Malformed("non-numeric score".into()))?;
        if scores.len() != passages.len() {
            return Err(GatewayError::LengthMismatch {
                expected: passages.len(),
                got: scores.len(),
            });
        }
        Ok(scores)
    }

    /// Ask for `{"verdicts":[...]}`, re-asking once with a format reminder.
    pub async fn judge(&self, prompt: &str, expected: Option<usize>) -> Result<JudgeOutcome, GatewayError> {
        self.require(&[Role::Judge])?;
        let params = SamplingParams::greedy(512);
        let first = self.complete(&GenerationRequest::new(prompt, &params, 1)).await?;
        let raw1 = first.texts.into_iter().next().unwrap_or_default();
        if let Some(v) = parse_verdicts(&raw1, expected) {
            return Ok(JudgeOutcome::Verdicts { verdicts: v, raw: vec![raw1] });
        }
        let reminder = format!("{prompt}\n\n{}", format_reminder(expected));
        let second = self.complete(&GenerationRequest::new(reminder, &params, 1)).await?;
        let raw2 = second.texts.into_iter().next().unwrap_or_default();
        Ok(match parse_verdicts(&raw2, expected) {
            Some(v) => JudgeOutcome::Verdicts {
                verdicts: v,
                raw: vec![raw1, raw2],
            },
            None => JudgeOutcome::Failure { raw: vec![raw1, raw2] },
        })
    }
}

pub fn format_reminder(expected: Option<usize>) -> String {
    match expected {
        Some(n) => format!(
            "Reply with JSON only, exactly of the form {{\"verdicts\": [...]}} holding {n} entries, each 0 or 1."
        ),
        None => "Reply with JSON only, exactly of the form {\"verdicts\": [...]} with each entry 0 or 1.".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum JudgeOutcome {
    Verdicts { verdicts: Vec<u8>, raw: Vec<String> },
    #[serde(rename = "judge-failure")]
    Failure { raw: Vec<String> },
}

impl JudgeOutcome {
    pub fn verdicts(&self) -> Option<&[u8]> {
        match self {
            JudgeOutcome::Verdicts { verdicts, .. } => Some(verdicts),
            JudgeOutcome::Failure { .. } => None,
        }
    }
}

fn parse_choices(v: &Value) -> Result<Vec<String>, GatewayError> {
    let choices = v
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Malformed("missing `choices`".into()))?;
    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, c) in choices.iter().enumerate() {
        let idx = c.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let text = c
            .get("text")
            .and_then(Value::as_str)
            .or_else(|| c.pointer("/message/content").and_then(Value::as_str))
            .ok_or_else(|| GatewayError::Malformed("choice without text".into()))?;
        indexed.push((idx, text.to_string()));
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, t)| t).collect())
}

pub fn normalize(mut v: Vec<f32>) -> Result<Vec<f32>, GatewayError> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
        return Err(GatewayError::Malformed("zero or non-finite embedding".into()));
    }
    for x in &mut v {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(v)
}

/// The first balanced `{...}` span, skipping braces inside JSON strings.
pub fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let s = start + off;
        let mut depth = 0i32;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(s) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[s..=i]);
                    }
                }
                _ => {}
            }
        }
        start = s + 1;
    }
    None
}

/// Verdicts from a judge reply; `None` if absent, not 0/1, or the wrong length.
pub fn parse_verdicts(text: &str, expected: Option<usize>) -> Option<Vec<u8>> {
    let mut rest = text;
    while let Some(obj) = first_balanced_object(rest) {
        let offset = obj.as_ptr() as usize - rest.as_ptr() as usize;
        if let Ok(v) = serde_json::from_str::<Value>(obj) {
            if let Some(arr) = v.get("verdicts").and_then(Value::as_array) {
                let out: Option<Vec<u8>> = arr
                    .iter()
                    .map(|x| match x.as_u64() {
                        Some(0) => Some(0),
                        Some(1) => Some(1),
                        _ => None,
                    })
                    .collect();
                return out.filter(|o| expected.is_none_or(|n| o.len() == n));
            }
        }
        rest = &rest[offset + 1..];
    }
    None
}

/// The four role clients a run may use.
#[derive(Debug, Clone, Default)]
pub struct Gateway {
    pub generator: Option<Client>,
    pub reader: Option<Client>,
    pub embedder: Option<Client>,
    pub reranker: Option<Client>,
    pub judge: Option<Client>,
}

macro_rules! need {
    ($name:ident, $field:ident, $what:literal) => {
        pub fn $name(&self) -> Result<&Client, GatewayError> {
            self.$field
                .as_ref()
                .ok_or_else(|| GatewayError::InvalidRequest(concat!("no ", $what, " endpoint configured").into()))
        }
    };
}

impl Gateway {
    need!(generator, generator, "generation");
    need!(reader, reader, "reader");
    need!(embedder, embedder, "embedding");
    need!(reranker, reranker, "rerank");
    need!(judge, judge, "judge");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_scan_skips_prose_and_strings() {
        let t = "Sure! Here you go: {\"note\": \"a } b\", \"verdicts\": [1, 0]} trailing {x}";
        assert_eq!(
            first_balanced_object(t),
            Some("{\"note\": \"a } b\", \"verdicts\": [1, 0]}")
        );
        assert_eq!(parse_verdicts(t, Some(2)), Some(vec![1, 0]));
        assert_eq!(parse_verdicts(t, Some(3)), None);
    }

    #[test]
    fn verdict_parsing_rejects_bad_values() {
        assert_eq!(parse_verdicts("{\"verdicts\":[1,1,0]}", None), Some(vec![1, 1, 0]));
        assert_eq!(parse_verdicts("{\"verdicts\":[2]}", None), None);
        assert_eq!(parse_verdicts("no json here", None), None);
        assert_eq!(parse_verdicts("{bad} {\"verdicts\":[0]}", Some(1)), Some(vec![0]));
    }

    #[test]
    fn overflow_detection() {
        assert!(is_overflow_body("{\"error\":{\"code\":\"context_length_exceeded\"}}"));
        assert!(is_overflow_body("This model's Maximum context length is 4096"));
        assert!(!is_overflow_body("bad request"));
    }

    #[test]
    fn backoff_grows_and_is_deterministic() {
        let a = backoff_delay(100, 0, "x");
        let b = backoff_delay(100, 1, "x");
        assert_eq!(a, backoff_delay(100, 0, "x"));
        assert!(a >= Duration::from_millis(100) && a < Duration::from_millis(150));
        assert!(b >= Duration::from_millis(200) && b < Duration::from_millis(300));
    }

    #[test]
    fn greedy_flag() {
        let r = GenerationRequest::new("p", &SamplingParams::greedy(8), 1);
        assert!(r.is_greedy());
        let r = GenerationRequest::new("p", &SamplingParams::context_generation(), 3);
        assert!(!r.is_greedy());
        assert_eq!(r.body("m")["max_tokens"], 512);
    }

    #[test]
    fn normalize_unit_norm() {
        let v = normalize(vec![3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        assert!(normalize(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn choices_are_ordered_by_index() {
        let v = json!({"choices":[{"index":1,"text":"b"},{"index":0,"text":"a"}]});
        assert_eq!(parse_choices(&v).unwrap(), vec!["a", "b"]);
        let v = json!({"choices":[{"message":{"content":"c"}}]});
        assert_eq!(parse_choices(&v).unwrap(), vec!["c"]);
    }
}
