//! Grounded multiple-choice reading and answer-letter extraction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;
use std::time::Duration;

use futures::stream::{self, StreamExt, TryStreamExt};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{letter_index, BenchmarkRecord};
use crate::gateway::{Client, GatewayError, GenerationRequest, SamplingParams};
use crate::hashing::sha256_hex;
use crate::prompt::{Grounding, PromptError, Renderer, ShotExample};

#[derive(Debug, thiserror::Error)]
pub enum ReaderError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("record `{record}`: {source}")]
    Gateway {
        record: String,
        #[source]
        source: GatewayError,
    },
    #[error("prediction log {path}: {reason}")]
    Log { path: String, reason: String },
}

/// Where the reader's passages came from, with the count used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundingKind {
    None,
    Generated(usize),
    Retrieved(usize),
    Mixed(usize),
}

impl GroundingKind {
    pub fn with_k(self, k: usize) -> Self {
        match self {
            _ if k == 0 => GroundingKind::None,
            GroundingKind::None | GroundingKind::Generated(_) => GroundingKind::Generated(k),
            GroundingKind::Retrieved(_) => GroundingKind::Retrieved(k),
            GroundingKind::Mixed(_) => GroundingKind::Mixed(k),
        }
    }
}

impl fmt::Display for GroundingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingKind::None => f.write_str("none"),
            GroundingKind::Generated(k) => write!(f, "generated({k})"),
            GroundingKind::Retrieved(k) => write!(f, "retrieved({k})"),
            GroundingKind::Mixed(k) => write!(f, "mixed({k})"),
        }
    }
}

impl FromStr for GroundingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(GroundingKind::None);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("bad grounding `{s}`"))?;
        let k: usize = rest
            .strip_suffix(')')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("bad grounding `{s}`"))?;
        match name {
            "generated" => Ok(GroundingKind::Generated(k)),
            "retrieved" => Ok(GroundingKind::Retrieved(k)),
            "mixed" => Ok(GroundingKind::Mixed(k)),
            _ => Err(format!("bad grounding `{s}`")),
        }
    }
}

impl Serialize for GroundingKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroundingKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One reader answer. Latency is kept out of the serialized log so that
/// identical runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    #[serde(default)]
    pub subject: Option<String>,
    pub raw: String,
    pub extracted_letter: Option<char>,
    pub correct: Option<bool>,
    pub grounding: GroundingKind,
    pub prompt_fingerprint: String,
    #[serde(default)]
    pub k_reduced: bool,
    #[serde(skip)]
    pub latency: Duration,
}

impl PredictionRecord {
    /// Unparseable answers count as wrong.
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
}

static ANSWER_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:the answer is):?\s*(?:\(([A-E])\)|([A-E])\b)").unwrap());
static LEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:\(([A-E])\)|([A-E])[.)](?:\s|$))").unwrap());

/// Letter chosen in a completion, or `None`.
///
/// Rules, first match wins: "The answer is (X)" or "The answer is X"
/// anywhere; a leading "(X)", "X." or "X)" on the first line; the first
/// standalone capital A-E on the first line. A letter beyond the option
/// count yields `None`.
pub fn extract_choice(text: &str, n_options: usize) -> Option<char> {
    let in_range = |c: char| letter_index(c).filter(|&i| i < n_options).map(|_| c);
    let cap = |c: regex::Captures| c.get(1).or(c.get(2)).and_then(|m| m.as_str().chars().next());
    if let Some(c) = ANSWER_IS.captures(text).and_then(cap) {
        return in_range(c);
    }
    let first = text.trim_start().lines().next().unwrap_or("");
    if let Some(c) = LEADING.captures(first).and_then(cap) {
        return in_range(c);
    }
    let chars: Vec<char> = first.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='E').contains(&c) {
            continue;
        }
        let before = i == 0 || !chars[i - 1].is_alphanumeric();
        let after = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if before && after {
            return in_range(c);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct ReaderConfig {
    pub family: String,
    pub shots: Vec<ShotExample>,
    pub max_new_tokens: u32,
    pub concurrency: usize,
}

impl ReaderConfig {
    pub fn new(family: &str, shots: Vec<ShotExample>) -> Self {
        ReaderConfig {
            family: family.to_string(),
            shots,
            max_new_tokens: 64,
            concurrency: 4,
        }
    }
}

/// One question with its candidate passages.
#[derive(Debug, Clone)]
pub struct ReadJob {
    pub record: BenchmarkRecord,
    pub grounding: Vec<Grounding>,
    pub kind: GroundingKind,
    pub k: usize,
}

pub struct Reader<'a> {
    pub renderer: &'a Renderer,
    pub client: &'a Client,
    pub config: &'a ReaderConfig,
}

impl Reader<'_> {
    pub fn prompt(&self, job: &ReadJob, k: usize) -> Result<String, PromptError> {
        self.renderer
            .render_reader_prompt(&job.record, &job.grounding, &self.config.shots, &self.config.family, k)
    }

    /// Greedy answer. A context overflow is retried once with one passage fewer.
    pub async fn answer(&self, job: &ReadJob) -> Result<PredictionRecord, ReaderError> {
        let params = SamplingParams::greedy(self.config.max_new_tokens);
        let mut k = job.k;
        let mut reduced = false;
        loop {
            let prompt = self.prompt(job, k)?;
            match self.client.complete(&GenerationRequest::new(prompt.clone(), &params, 1)).await {
                Ok(c) => {
                    let raw = c.texts.into_iter().next().unwrap_or_default();
                    let letter = extract_choice(&raw, job.record.options.len());
                    return Ok(PredictionRecord {
                        record_id: job.record.id.clone(),
                        subject: job.record.subject.clone(),
                        correct: letter.map(|l| l == job.record.gold_letter()),
                        extracted_letter: letter,
                        raw,
                        grounding: job.kind.with_k(k),
                        prompt_fingerprint: sha256_hex(prompt.as_bytes()),
                        k_reduced: reduced,
                        latency: c.latency,
                    });
                }
                Err(e) if e.is_context_overflow() && !reduced && k > 0 => {
                    tracing::warn!(record = %job.record.id, k, "context overflow, retrying with k-1");
                    k -= 1;
                    reduced = true;
                }
                Err(source) => {
                    return Err(ReaderError::Gateway {
                        record: job.record.id.clone(),
                        source,
                    })
                }
            }
        }
    }

    /// Answers in job order, `concurrency` at a time.
    pub async fn answer_all(&self, jobs: &[ReadJob]) -> Result<Vec<PredictionRecord>, ReaderError> {
        stream::iter(jobs.iter().map(|j| self.answer(j)))
            .buffered(self.config.concurrency.max(1))
            .try_collect()
            .await
    }
}

pub fn predictions_to_jsonl(preds: &[PredictionRecord]) -> String {
    let mut s = String::new();
    for p in preds {
        s.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        s.push('\n');
    }
    s
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<(), ReaderError> {
    std::fs::write(path, predictions_to_jsonl(preds)).map_err(|e| ReaderError::Log {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, ReaderError> {
    let err = |reason: String| ReaderError::Log {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
        .collect()
}
