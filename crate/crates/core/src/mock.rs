//! Deterministic mock server for every endpoint role.
//!
//! Routes:
//! - `POST /v1/completions`, `POST /v1/chat/completions`: generation
//! - `POST /reader/v1/completions`, `POST /reader/v1/chat/completions`: reader
//! - `POST /judge/v1/completions`, `POST /judge/v1/chat/completions`: judge
//! - `POST /v1/embeddings`, `POST /rerank`
//! - `GET /admin/calls`, `POST /admin/reset`
//!
//! Replies come from a JSON fixture. Generation and reader sections hold
//! ordered rules (`contains`, `regex` or `prompt_sha256` matchers) and a
//! default policy. Everything is a pure function of the request, except the
//! `fail-first` policy which also looks at the per-route call count.
//!
//! ```json
//! {
//!   "generation": {"rules": [{"contains": "PING", "reply": {"policy": "fixed", "texts": ["PONG"]}}],
//!                  "default": {"policy": "synthetic-context"}},
//!   "reader": {"default": {"policy": "gold-oracle", "answer_key_file": "bench.jsonl"}},
//!   "rerank": {"policy": "pattern-preference", "patterns": ["\\[focused\\]", "\\[free\\]"]},
//!   "judge": {"policy": "all-yes"}
//! }
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{letter_index, parse_benchmark, Format};
use crate::hashing::sha256_hex;

/// Marker the gateway appends when re-asking the judge.
const REASK_MARKER: &str = "Reply with JSON only";

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("fixture {path}: {reason}")]
    Fixture { path: String, reason: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub generation: GenerationSpec,
    /// Defaults to the generation section when absent.
    #[serde(default)]
    pub reader: Option<GenerationSpec>,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub rerank: RerankPolicy,
    #[serde(default)]
    pub judge: JudgePolicy,
    /// Added latency per request, in milliseconds.
    #[serde(default)]
    pub delay_ms: u64,
    /// Prompts longer than this (in characters) get a context-overflow error.
    #[serde(default)]
    pub context_window_chars: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerationSpec {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default: GenPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub regex: Option<String>,
    #[serde(default)]
    pub prompt_sha256: Option<String>,
    pub reply: GenPolicy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplyStyle {
    /// `(X) text.`
    #[default]
    Paren,
    /// `The answer is (X) text.`
    AnswerIs,
    /// `X`
    Letter,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum GenPolicy {
    /// Reply with the prompt itself.
    #[default]
    Echo,
    /// Choice `i` is `texts[i % len]`.
    Fixed { texts: Vec<String> },
    /// Answer with the gold option of the last known question in the prompt.
    GoldOracle {
        #[serde(default)]
        answer_key: BTreeMap<String, String>,
        #[serde(default)]
        answer_key_file: Option<PathBuf>,
        #[serde(default)]
        style: ReplyStyle,
    },
    /// Gold answer if the prompt contains `marker`, otherwise the first wrong option.
    GoldIfRevealed {
        marker: String,
        #[serde(default)]
        answer_key: BTreeMap<String, String>,
        #[serde(default)]
        answer_key_file: Option<PathBuf>,
        #[serde(default)]
        style: ReplyStyle,
    },
    /// Always the same letter.
    AlwaysLetter { letter: char },
    /// Hash-derived background text tagged `[focused]` or `[free]`.
    SyntheticContext {
        #[serde(default = "default_words")]
        words: usize,
        #[serde(default)]
        free_suffix: Option<String>,
        #[serde(default)]
        focused_suffix: Option<String>,
    },
    /// HTTP error for the first `times` calls on this route, then `then`.
    FailFirst {
        status: u16,
        times: u64,
        then: Box<GenPolicy>,
    },
    /// Always an HTTP error.
    Fail { status: u16 },
}

fn default_words() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec { dim: default_dim() }
    }
}

fn default_dim() -> usize {
    64
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum RerankPolicy {
    /// Passages matching earlier patterns score higher; non-matching score 0.
    /// A hash-derived noise term in `[0, noise)` breaks ties within a tier.
    PatternPreference {
        patterns: Vec<String>,
        #[serde(default = "default_noise")]
        noise: f32,
    },
    /// Score = input position, so later passages rank first.
    ReverseInput,
    /// Jaccard overlap of lowercase word sets.
    #[default]
    LexicalOverlap,
}

fn default_noise() -> f32 {
    0.5
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum JudgePolicy {
    #[default]
    AllYes,
    AllNo,
    /// All-yes JSON inside surrounding prose.
    ProseWrapped,
    /// Never valid JSON.
    Garbage,
    /// Garbage first, valid all-yes once re-asked.
    GarbageThenYes,
    /// Verdict for item `i` is 1 iff its text matches `pattern`.
    ItemRegex { pattern: String },
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let err = |reason: String| MockError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut f: Fixture = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        f.resolve_paths(base);
        Ok(f)
    }

    /// Make `answer_key_file` paths absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        fn fix(p: &mut GenPolicy, base: &Path) {
            match p {
                GenPolicy::GoldOracle { answer_key_file: Some(f), .. }
                | GenPolicy::GoldIfRevealed { answer_key_file: Some(f), .. } => {
                    if f.is_relative() {
                        *f = base.join(&*f);
                    }
                }
                GenPolicy::FailFirst { then, .. } => fix(then, base),
                _ => {}
            }
        }
        for spec in std::iter::once(&mut self.generation).chain(self.reader.as_mut()) {
            fix(&mut spec.default, base);
            for r in &mut spec.rules {
                fix(&mut r.reply, base);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Generation,
    Reader,
    Judge,
    Embedding,
    Rerank,
}

#[derive(Debug, Default)]
struct Counters {
    generation: AtomicU64,
    reader: AtomicU64,
    judge: AtomicU64,
    embedding: AtomicU64,
    rerank: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
}

impl Counters {
    fn of(&self, r: Route) -> &AtomicU64 {
        match r {
            Route::Generation => &self.generation,
            Route::Reader => &self.reader,
            Route::Judge => &self.judge,
            Route::Embedding => &self.embedding,
            Route::Rerank => &self.rerank,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generation: u64,
    pub reader: u64,
    pub judge: u64,
    pub embedding: u64,
    pub rerank: u64,
    pub total: u64,
    pub max_in_flight: u64,
}

struct Compiled {
    rules: Vec<(Matcher, CompiledPolicy)>,
    default: CompiledPolicy,
}

enum Matcher {
    Contains(String),
    Regex(Regex),
    Sha(String),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(prompt),
            Matcher::Sha(h) => sha256_hex(prompt.as_bytes()).eq_ignore_ascii_case(h),
        }
    }
}

enum CompiledPolicy {
    Echo,
    Fixed(Vec<String>),
    Gold {
        key: BTreeMap<String, String>,
        style: ReplyStyle,
        marker: Option<String>,
    },
    AlwaysLetter(char),
    Synthetic {
        words: usize,
        free_suffix: Option<String>,
        focused_suffix: Option<String>,
    },
    FailFirst {
        status: u16,
        times: u64,
        then: Box<CompiledPolicy>,
    },
    Fail(u16),
}

fn load_key(
    inline: &BTreeMap<String, String>,
    file: &Option<PathBuf>,
) -> Result<BTreeMap<String, String>, String> {
    let mut key = inline.clone();
    if let Some(f) = file {
        let text = std::fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display()))?;
        for r in parse_benchmark(&text, Format::Canonical, "answer-key").map_err(|e| e.to_string())? {
            key.insert(r.question.clone(), r.options[r.gold_index].clone());
        }
    }
    Ok(key)
}

fn compile_policy(p: &GenPolicy) -> Result<CompiledPolicy, String> {
    Ok(match p {
        GenPolicy::Echo => CompiledPolicy::Echo,
        GenPolicy::Fixed { texts } => {
            if texts.is_empty() {
                return Err("fixed policy needs at least one text".into());
            }
            CompiledPolicy::Fixed(texts.clone())
        }
        GenPolicy::GoldOracle {
            answer_key,
            answer_key_file,
            style,
        } => CompiledPolicy::Gold {
            key: load_key(answer_key, answer_key_file)?,
            style: *style,
            marker: None,
        },
        GenPolicy::GoldIfRevealed {
            marker,
            answer_key,
            answer_key_file,
            style,
        } => CompiledPolicy::Gold {
            key: load_key(answer_key, answer_key_file)?,
            style: *style,
            marker: Some(marker.clone()),
        },
        GenPolicy::AlwaysLetter { letter } => CompiledPolicy::AlwaysLetter(*letter),
        GenPolicy::SyntheticContext {
            words,
            free_suffix,
            focused_suffix,
        } => CompiledPolicy::Synthetic {
            words: *words,
            free_suffix: free_suffix.clone(),
            focused_suffix: focused_suffix.clone(),
        },
        GenPolicy::FailFirst { status, times, then } => CompiledPolicy::FailFirst {
            status: *status,
            times: *times,
            then: Box::new(compile_policy(then)?),
        },
        GenPolicy::Fail { status } => CompiledPolicy::Fail(*status),
    })
}

fn compile_spec(spec: &GenerationSpec) -> Result<Compiled, String> {
    let mut rules = Vec::new();
    for r in &spec.rules {
        let m = match (&r.contains, &r.regex, &r.prompt_sha256) {
            (Some(c), None, None) => Matcher::Contains(c.clone()),
            (None, Some(re), None) => Matcher::Regex(Regex::new(re).map_err(|e| e.to_string())?),
            (None, None, Some(h)) => Matcher::Sha(h.clone()),
            _ => return Err("each rule needs exactly one of contains/regex/prompt_sha256".into()),
        };
        rules.push((m, compile_policy(&r.reply)?));
    }
    Ok(Compiled {
        rules,
        default: compile_policy(&spec.default)?,
    })
}

enum CompiledRerank {
    Patterns(Vec<Regex>, f32),
    Reverse,
    Lexical,
}

enum CompiledJudge {
    AllYes,
    AllNo,
    Prose,
    Garbage,
    GarbageThenYes,
    ItemRegex(Regex),
}

struct AppState {
    generation: Compiled,
    reader: Compiled,
    rerank: CompiledRerank,
    judge: CompiledJudge,
    dim: usize,
    delay: Duration,
    window: Option<usize>,
    counters: Counters,
}

impl AppState {
    fn build(f: &Fixture) -> Result<Self, String> {
        let generation = compile_spec(&f.generation)?;
        let reader = compile_spec(f.reader.as_ref().unwrap_or(&f.generation))?;
        let rerank = match &f.rerank {
            RerankPolicy::PatternPreference { patterns, noise } => CompiledRerank::Patterns(
                patterns
                    .iter()
                    .map(|p| Regex::new(p).map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?,
                *noise,
            ),
            RerankPolicy::ReverseInput => CompiledRerank::Reverse,
            RerankPolicy::LexicalOverlap => CompiledRerank::Lexical,
        };
        let judge = match &f.judge {
            JudgePolicy::AllYes => CompiledJudge::AllYes,
            JudgePolicy::AllNo => CompiledJudge::AllNo,
            JudgePolicy::ProseWrapped => CompiledJudge::Prose,
            JudgePolicy::Garbage => CompiledJudge::Garbage,
            JudgePolicy::GarbageThenYes => CompiledJudge::GarbageThenYes,
            JudgePolicy::ItemRegex { pattern } => {
                CompiledJudge::ItemRegex(Regex::new(pattern).map_err(|e| e.to_string())?)
            }
        };
        if f.embedding.dim == 0 {
            return Err("embedding dim must be positive".into());
        }
        Ok(AppState {
            generation,
            reader,
            rerank,
            judge,
            dim: f.embedding.dim,
            delay: Duration::from_millis(f.delay_ms),
            window: f.context_window_chars,
            counters: Counters::default(),
        })
    }

    fn snapshot(&self) -> CallCounts {
        let c = &self.counters;
        let g = c.generation.load(Ordering::SeqCst);
        let r = c.reader.load(Ordering::SeqCst);
        let j = c.judge.load(Ordering::SeqCst);
        let e = c.embedding.load(Ordering::SeqCst);
        let k = c.rerank.load(Ordering::SeqCst);
        CallCounts {
            generation: g,
            reader: r,
            judge: j,
            embedding: e,
            rerank: k,
            total: g + r + j + e + k,
            max_in_flight: c.max_in_flight.load(Ordering::SeqCst),
        }
    }
}

struct InFlight<'a>(&'a Counters);

impl<'a> InFlight<'a> {
    fn enter(c: &'a Counters) -> Self {
        let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        c.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(c)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn error(status: u16, message: &str, code: &str) -> Response {
    let s = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (s, Json(json!({"error": {"message": message, "code": code}}))).into_response()
}

fn prompt_of(body: &Value) -> Option<String> {
    if let Some(p) = body.get("prompt").and_then(Value::as_str) {
        return Some(p.to_string());
    }
    let msgs = body.get("messages")?.as_array()?;
    let parts: Vec<&str> = msgs
        .iter()
        .filter_map(|m| m.get("content").and_then(Value::as_str))
        .collect();
    Some(parts.join("\n"))
}

/// Option lines following the question: `(A) x`, `A. x` or `A) x`.
fn option_lines_after(text: &str) -> Vec<(char, String)> {
    let re = Regex::new(r"^\(?([A-E])[\).]\s?(.*)$").unwrap();
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        match re.captures(line) {
            Some(c) => {
                let l = c[1].chars().next().unwrap();
                if letter_index(l) != Some(out.len()) {
                    break;
                }
                out.push((l, c[2].trim_end_matches("</s>").to_string()));
            }
            None if out.is_empty() => continue,
            None => break,
        }
    }
    out
}

fn styled(style: ReplyStyle, l: char, text: &str) -> String {
    match style {
        ReplyStyle::Paren => format!("({l}) {text}."),
        ReplyStyle::AnswerIs => format!("The answer is ({l}) {text}."),
        ReplyStyle::Letter => l.to_string(),
    }
}

/// Gold reply for the latest-occurring known question in the prompt.
fn gold_reply(prompt: &str, key: &BTreeMap<String, String>, style: ReplyStyle, revealed: bool) -> String {
    let found = key
        .iter()
        .filter_map(|(q, a)| prompt.rfind(q.as_str()).map(|pos| (pos, q, a)))
        .max_by_key(|(pos, q, _)| (*pos, q.len()));
    let Some((pos, _, gold)) = found else {
        return "I don't know.".to_string();
    };
    let opts = option_lines_after(&prompt[pos..]);
    if opts.is_empty() {
        return "I don't know.".to_string();
    }
    let pick = if revealed {
        opts.iter().find(|(_, t)| t == gold)
    } else {
        opts.iter().find(|(_, t)| t != gold)
    };
    match pick {
        Some((l, t)) => styled(style, *l, t),
        None => "I don't know.".to_string(),
    }
}

const VOCAB: &[&str] = &[
    "tissue", "cell", "membrane", "enzyme", "receptor", "pathway", "clinical", "patient", "therapy", "dose",
    "infection", "immune", "response", "chronic", "acute", "syndrome", "renal", "hepatic", "cardiac", "neural",
    "protein", "gene", "expression", "signal", "vascular", "pressure", "lesion", "marker", "diagnosis", "risk",
    "factor", "mechanism", "inhibits", "activates", "binds", "reduces", "increases", "causes", "presents", "shows",
];

/// The trailing question block decides the view: dash option lines mean option-focused.
fn is_option_focused(prompt: &str) -> bool {
    let tail = prompt.rsplit("### Question:").next().unwrap_or(prompt);
    tail.lines().any(|l| l.starts_with("- "))
}

fn synthetic_context(prompt: &str, seed: u64, index: usize, words: usize, focused: bool, suffix: Option<&str>) -> String {
    let mut out = Vec::with_capacity(words + 4);
    out.push(if focused { "[focused]" } else { "[free]" }.to_string());
    let mut block = 0u64;
    while out.len() < words + 1 {
        let h = sha256_hex(format!("{seed}:{index}:{block}:{prompt}").as_bytes());
        for chunk in h.as_bytes().chunks(2) {
            if out.len() > words {
                break;
            }
            let b = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16).unwrap();
            out.push(VOCAB[b as usize % VOCAB.len()].to_string());
        }
        block += 1;
    }
    let mut text = out.join(" ");
    text.push('.');
    if let Some(s) = suffix {
        text.push(' ');
        text.push_str(s);
    }
    text
}

fn hash_unit(parts: &str) -> f32 {
    let h = sha256_hex(parts.as_bytes());
    u32::from_str_radix(&h[..8], 16).unwrap() as f32 / u32::MAX as f32
}

fn words_lower(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed bag-of-words embedding (not normalized).
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f32; dim];
    v[0] = 1e-3;
    for w in words_lower(text) {
        let h = sha256_hex(w.as_bytes());
        let idx = u32::from_str_radix(&h[..8], 16).unwrap() as usize % dim;
        let sign = if u8::from_str_radix(&h[8..10], 16).unwrap() & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    v
}

fn rerank_scores(policy: &CompiledRerank, query: &str, passages: &[String]) -> Vec<f32> {
    match policy {
        CompiledRerank::Reverse => (0..passages.len()).map(|i| i as f32).collect(),
        CompiledRerank::Patterns(pats, noise) => passages
            .iter()
            .map(|p| {
                let tier = pats
                    .iter()
                    .position(|r| r.is_match(p))
                    .map(|i| (pats.len() - i) as f32)
                    .unwrap_or(0.0);
                tier + noise * hash_unit(&format!("{query}\u{0}{p}"))
            })
            .collect(),
        CompiledRerank::Lexical => {
            let q: std::collections::BTreeSet<String> = words_lower(query).into_iter().collect();
            passages
                .iter()
                .map(|p| {
                    let s: std::collections::BTreeSet<String> = words_lower(p).into_iter().collect();
                    let inter = q.intersection(&s).count();
                    let union = q.union(&s).count();
                    if union == 0 {
                        0.0
                    } else {
                        inter as f32 / union as f32
                    }
                })
                .collect()
        }
    }
}

/// `Number of items: N` and `Item i: text` lines of a judge prompt.
fn judge_items(prompt: &str) -> (Option<usize>, Vec<String>) {
    let mut n = None;
    let mut items = Vec::new();
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("Number of items: ") {
            n = rest.trim().parse().ok();
        } else if let Some(rest) = line.strip_prefix("Item ") {
            if let Some((_, text)) = rest.split_once(": ") {
                items.push(text.to_string());
            }
        }
    }
    (n, items)
}

/// Claims for a decomposition prompt: the sentences after the `Answer:` line.
fn decompose(prompt: &str) -> Vec<String> {
    let answer = prompt
        .lines()
        .find(|l| l.starts_with("Answer:"))
        .map(|l| l.trim_start_matches("Answer:").trim().to_string())
        .unwrap_or_default();
    answer
        .split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn judge_reply(policy: &CompiledJudge, prompt: &str) -> String {
    if prompt.contains("Task: claim-decomposition") {
        return json!({"claims": decompose(prompt)}).to_string();
    }
    let (n, items) = judge_items(prompt);
    let n = n.unwrap_or(items.len()).max(1);
    let all = |v: u8| json!({"verdicts": vec![v; n]}).to_string();
    match policy {
        CompiledJudge::AllYes => all(1),
        CompiledJudge::AllNo => all(0),
        CompiledJudge::Prose => format!("Let me think about it. Here is my verdict: {} Hope this helps.", all(1)),
        CompiledJudge::Garbage => "I would rather not answer in that format.".to_string(),
        CompiledJudge::GarbageThenYes => {
            if prompt.contains(REASK_MARKER) {
                all(1)
            } else {
                "Verdicts: yes, yes, yes".to_string()
            }
        }
        CompiledJudge::ItemRegex(re) => {
            let v: Vec<u8> = (0..n)
                .map(|i| items.get(i).map(|t| re.is_match(t) as u8).unwrap_or(0))
                .collect();
            json!({"verdicts": v}).to_string()
        }
    }
}

fn completion_body(chat: bool, model: &str, prompt: &str, texts: &[String]) -> Value {
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if chat {
                json!({"index": i, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"})
            } else {
                json!({"index": i, "text": t, "finish_reason": "stop"})
            }
        })
        .collect();
    let completion_tokens: usize = texts.iter().map(|t| t.split_whitespace().count()).sum();
    json!({
        "id": "mock",
        "object": if chat { "chat.completion" } else { "text_completion" },
        "model": model,
        "choices": choices,
        "usage": {"prompt_tokens": prompt.split_whitespace().count(), "completion_tokens": completion_tokens},
    })
}

fn run_policy(p: &CompiledPolicy, prompt: &str, n: usize, seed: u64, call_index: u64) -> Result<Vec<String>, u16> {
    Ok(match p {
        CompiledPolicy::Echo => vec![prompt.to_string(); n],
        CompiledPolicy::Fixed(texts) => (0..n).map(|i| texts[i % texts.len()].clone()).collect(),
        CompiledPolicy::Gold { key, style, marker } => {
            let revealed = marker.as_ref().is_none_or(|m| prompt.contains(m.as_str()));
            vec![gold_reply(prompt, key, *style, revealed); n]
        }
        CompiledPolicy::AlwaysLetter(l) => vec![l.to_string(); n],
        CompiledPolicy::Synthetic {
            words,
            free_suffix,
            focused_suffix,
        } => {
            let focused = is_option_focused(prompt);
            let suffix = if focused { focused_suffix } else { free_suffix };
            (0..n)
                .map(|i| synthetic_context(prompt, seed, i, *words, focused, suffix.as_deref()))
                .collect()
        }
        CompiledPolicy::FailFirst { status, times, then } => {
            if call_index < *times {
                return Err(*status);
            }
            return run_policy(then, prompt, n, seed, call_index);
        }
        CompiledPolicy::Fail(status) => return Err(*status),
    })
}

async fn handle_completion(state: Arc<AppState>, route: Route, chat: bool, body: Value) -> Response {
    let call_index = state.counters.of(route).fetch_add(1, Ordering::SeqCst);
    let _g = InFlight::enter(&state.counters);
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    let Some(prompt) = prompt_of(&body) else {
        return error(400, "missing prompt or messages", "invalid_request");
    };
    if let Some(w) = state.window {
        if prompt.chars().count() > w {
            return error(
                400,
                &format!("This model's maximum context length is {w} characters"),
                "context_length_exceeded",
            );
        }
    }
    let n = body.get("n").and_then(Value::as_u64).unwrap_or(1) as usize;
    let seed = body.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let model = body.get("model").and_then(Value::as_str).unwrap_or("mock");
    let texts = match route {
        Route::Judge => vec![judge_reply(&state.judge, &prompt); n],
        _ => {
            let spec = if route == Route::Reader { &state.reader } else { &state.generation };
            let policy = spec
                .rules
                .iter()
                .find(|(m, _)| m.matches(&prompt))
                .map(|(_, p)| p)
                .unwrap_or(&spec.default);
            match run_policy(policy, &prompt, n, seed, call_index) {
                Ok(t) => t,
                Err(status) => return error(status, "configured failure", "mock_failure"),
            }
        }
    };
    Json(completion_body(chat, model, &prompt, &texts)).into_response()
}

async fn handle_embeddings(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> Response {
    state.counters.of(Route::Embedding).fetch_add(1, Ordering::SeqCst);
    let _g = InFlight::enter(&state.counters);
    let inputs: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(a)) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        _ => return error(400, "missing input", "invalid_request"),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "object": "embedding", "embedding": mock_embedding(t, state.dim)}))
        .collect();
    Json(json!({"object": "list", "data": data})).into_response()
}

async fn handle_rerank(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> Response {
    state.counters.of(Route::Rerank).fetch_add(1, Ordering::SeqCst);
    let _g = InFlight::enter(&state.counters);
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    let query = body.get("query").and_then(Value::as_str).unwrap_or_default();
    let passages: Vec<String> = body
        .get("passages")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    if passages.is_empty() {
        return error(400, "passages must be non-empty", "invalid_request");
    }
    Json(json!({"scores": rerank_scores(&state.rerank, query, &passages)})).into_response()
}

fn router(state: Arc<AppState>) -> Router {
    let comp = |route: Route, chat: bool| {
        move |State(s): State<Arc<AppState>>, Json(body): Json<Value>| handle_completion(s, route, chat, body)
    };
    Router::new()
        .route("/v1/completions", post(comp(Route::Generation, false)))
        .route("/v1/chat/completions", post(comp(Route::Generation, true)))
        .route("/reader/v1/completions", post(comp(Route::Reader, false)))
        .route("/reader/v1/chat/completions", post(comp(Route::Reader, true)))
        .route("/judge/v1/completions", post(comp(Route::Judge, false)))
        .route("/judge/v1/chat/completions", post(comp(Route::Judge, true)))
        .route("/v1/embeddings", post(handle_embeddings))
        .route("/rerank", post(handle_rerank))
        .route(
            "/admin/calls",
            get(|State(s): State<Arc<AppState>>| async move { Json(s.snapshot()) }),
        )
        .route(
            "/admin/reset",
            post(|State(s): State<Arc<AppState>>| async move {
                let c = &s.counters;
                for a in [&c.generation, &c.reader, &c.judge, &c.embedding, &c.rerank, &c.max_in_flight] {
                    a.store(0, Ordering::SeqCst);
                }
                Json(s.snapshot())
            }),
        )
        .with_state(state)
}

/// A running mock server. Dropping it stops the server.
pub struct MockServer {
    pub addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
}

impl MockServer {
    /// Bind `host:port` (port 0 picks a free port) and serve in the background.
    pub async fn start(fixture: &Fixture, host: &str, port: u16) -> Result<Self, MockError> {
        let state = Arc::new(AppState::build(fixture).map_err(|reason| MockError::Fixture {
            path: "<fixture>".into(),
            reason,
        })?);
        let addr_s = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr_s)
            .await
            .map_err(|source| MockError::Bind { addr: addr_s.clone(), source })?;
        let addr = listener.local_addr().map_err(|source| MockError::Bind { addr: addr_s, source })?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let handle = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            state,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn reader_url(&self) -> String {
        format!("{}/reader", self.url())
    }

    pub fn judge_url(&self) -> String {
        format!("{}/judge", self.url())
    }

    pub fn calls(&self) -> CallCounts {
        self.state.snapshot()
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.await;
        }
    }

    /// Serve until the process is interrupted.
    pub async fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_reply_uses_last_question() {
        let mut key = BTreeMap::new();
        key.insert("Shot question?".to_string(), "one".to_string());
        key.insert("New question?".to_string(), "four".to_string());
        let prompt = "### Question:\nShot question?\n(A) one\n(B) two\n\n### Question:\nNew question?\n(A) three\n(B) four</s>\n<|assistant|>";
        assert_eq!(gold_reply(prompt, &key, ReplyStyle::Paren, true), "(B) four.");
        assert_eq!(gold_reply(prompt, &key, ReplyStyle::Paren, false), "(A) three.");
        assert_eq!(gold_reply(prompt, &key, ReplyStyle::AnswerIs, true), "The answer is (B) four.");
        let dot = "Question: New question?\nA. four\nB. three\nAnswer:";
        assert_eq!(gold_reply(dot, &key, ReplyStyle::Letter, true), "A");
    }

    #[test]
    fn synthetic_context_is_deterministic_and_tagged() {
        let a = synthetic_context("p", 1, 0, 10, true, None);
        assert_eq!(a, synthetic_context("p", 1, 0, 10, true, None));
        assert_ne!(a, synthetic_context("p", 2, 0, 10, true, None));
        assert!(a.starts_with("[focused] "));
        assert_eq!(a.split_whitespace().count(), 11);
        assert!(synthetic_context("p", 1, 0, 10, false, Some("REVEAL")).ends_with(". REVEAL"));
    }

    #[test]
    fn view_detection() {
        assert!(is_option_focused("### Question:\nq\n- a\n- b\n\n### Context:"));
        assert!(!is_option_focused("### Question:\nq\n- a\n\n### Context:\nx\n\n### Question:\nq2\n\n### Context:"));
    }

    #[test]
    fn judge_items_and_policies() {
        let p = "Number of items: 3\nItem 1: alpha\nItem 2: beta\nItem 3: alpha beta";
        let r = judge_reply(&CompiledJudge::ItemRegex(Regex::new("alpha").unwrap()), p);
        assert_eq!(r, "{\"verdicts\":[1,0,1]}");
        assert_eq!(judge_reply(&CompiledJudge::AllNo, p), "{\"verdicts\":[0,0,0]}");
        let d = judge_reply(&CompiledJudge::AllYes, "Task: claim-decomposition\nAnswer: A is B. C is D.");
        assert_eq!(d, "{\"claims\":[\"A is B.\",\"C is D.\"]}");
    }

    #[test]
    fn rerank_policies() {
        let ps = vec!["[free] x".to_string(), "kb".to_string(), "[focused] y".to_string()];
        let s = rerank_scores(
            &CompiledRerank::Patterns(vec![Regex::new(r"\[focused\]").unwrap(), Regex::new(r"\[free\]").unwrap()], 0.5),
            "q",
            &ps,
        );
        assert!(s[2] > s[0] && s[0] > s[1]);
        assert_eq!(rerank_scores(&CompiledRerank::Reverse, "q", &ps), vec![0.0, 1.0, 2.0]);
    }
}
