//! Benchmark records: loading, validation, summaries and seeded option shuffling.
//!
//! Every dataset is mapped onto one canonical line-delimited JSON form:
//! `{"id": str, "question": str, "options": [str], "gold": int, "subject": str|null}`.
//! The public benchmark layouts are handled by thin adapters selected with
//! [`Format`].
//!
//! Shuffling uses ChaCha8 with a per-record stream. The stream seed is the
//! first 8 bytes (little endian) of `SHA-256("{seed}:{record id}")`, and the
//! permutation is a Fisher-Yates pass whose bounded draws use rejection
//! sampling on `next_u64`, so the result is identical on every platform.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: gold index {gold} out of range for {arity} options")]
    GoldOutOfRange {
        line: usize,
        gold: i64,
        arity: usize,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
    #[error("invalid record `{id}`: {reason}")]
    Invalid { id: String, reason: String },
}

/// One multiple-choice question. Option letters are positional and never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    #[serde(rename = "gold")]
    pub gold_index: usize,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(skip)]
    pub dataset_tag: String,
}

/// The letter bound to option position `i`.
pub fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Position of a letter, if it is one of `A..E`.
pub fn letter_index(c: char) -> Option<usize> {
    match c {
        'A'..='E' => Some(c as usize - 'A' as usize),
        _ => None,
    }
}

impl BenchmarkRecord {
    pub fn gold_letter(&self) -> char {
        letter(self.gold_index)
    }

    pub fn gold_text(&self) -> &str {
        &self.options[self.gold_index]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(format!("{n} options, expected {MIN_OPTIONS}..={MAX_OPTIONS}"));
        }
        if self.gold_index >= n {
            return Err(format!("gold index {} out of range", self.gold_index));
        }
        let mut seen = HashSet::new();
        for (i, o) in self.options.iter().enumerate() {
            let norm = o.trim();
            if norm.is_empty() {
                return Err(format!("option {} is empty", letter(i)));
            }
            if !seen.insert(norm) {
                return Err(format!("option {} duplicates an earlier option", letter(i)));
            }
        }
        Ok(())
    }

    /// Canonical JSONL line (no trailing newline).
    pub fn to_canonical_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Source layout of a benchmark file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `{"id","question","options":[..],"gold","subject"}`
    Canonical,
    /// `{"question","options":{"A":..},"answer_idx":"C","meta_info"?}`; ids are `{tag}-{line}`.
    MedQa,
    /// `{"id","question","opa".."opd","cop":1..4,"subject_name"}`
    MedMcqa,
    /// `{"question","choices":[..],"answer":0..,"subject"}`; ids are `{tag}-{line}`.
    Mmlu,
}

impl std::str::FromStr for Format {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, CorpusError> {
        match s {
            "canonical" | "jsonl" => Ok(Format::Canonical),
            "medqa" => Ok(Format::MedQa),
            "medmcqa" => Ok(Format::MedMcqa),
            "mmlu" => Ok(Format::Mmlu),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn load_benchmark(path: &Path, format: Format, tag: &str) -> Result<Vec<BenchmarkRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_benchmark(&text, format, tag)
}

/// Parse benchmark text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_benchmark(text: &str, format: Format, tag: &str) -> Result<Vec<BenchmarkRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            field: "<json>".into(),
            reason: e.to_string(),
        })?;
        let mut rec = match format {
            Format::Canonical => from_canonical(&v, line)?,
            Format::MedQa => from_medqa(&v, line, tag)?,
            Format::MedMcqa => from_medmcqa(&v, line)?,
            Format::Mmlu => from_mmlu(&v, line, tag)?,
        };
        rec.dataset_tag = tag.to_string();
        if let Err(reason) = rec.validate() {
            let field = match reason.as_str() {
                "empty id" => "id",
                "empty question" => "question",
                r if r.starts_with("gold") => "gold",
                _ => "options",
            };
            return Err(CorpusError::Malformed {
                line,
                field: field.into(),
                reason,
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: rec.id });
        }
        out.push(rec);
    }
    Ok(out)
}

fn malformed(line: usize, field: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn req_str(v: &Value, field: &str, line: usize) -> Result<String, CorpusError> {
    match v.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) if field == "id" => Ok(n.to_string()),
        Some(_) => Err(malformed(line, field, "expected a string")),
        None => Err(malformed(line, field, "missing")),
    }
}

fn opt_str(v: &Value, field: &str, line: usize) -> Result<Option<String>, CorpusError> {
    match v.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(malformed(line, field, "expected a string or null")),
    }
}

fn req_int(v: &Value, field: &str, line: usize) -> Result<i64, CorpusError> {
    v.get(field)
        .ok_or_else(|| malformed(line, field, "missing"))?
        .as_i64()
        .ok_or_else(|| malformed(line, field, "expected an integer"))
}

fn str_list(v: &Value, field: &str, line: usize) -> Result<Vec<String>, CorpusError> {
    let arr = v
        .get(field)
        .ok_or_else(|| malformed(line, field, "missing"))?
        .as_array()
        .ok_or_else(|| malformed(line, field, "expected a list"))?;
    arr.iter()
        .map(|o| o.as_str().map(str::to_string).ok_or_else(|| malformed(line, field, "expected strings")))
        .collect()
}

fn gold(g: i64, arity: usize, line: usize) -> Result<usize, CorpusError> {
    if g < 0 || g as usize >= arity {
        return Err(CorpusError::GoldOutOfRange { line, gold: g, arity });
    }
    Ok(g as usize)
}

fn from_canonical(v: &Value, line: usize) -> Result<BenchmarkRecord, CorpusError> {
    let options = str_list(v, "options", line)?;
    let g = gold(req_int(v, "gold", line)?, options.len(), line)?;
    Ok(BenchmarkRecord {
        id: req_str(v, "id", line)?,
        question: req_str(v, "question", line)?,
        gold_index: g,
        options,
        subject: opt_str(v, "subject", line)?,
        dataset_tag: String::new(),
    })
}

fn from_medqa(v: &Value, line: usize, tag: &str) -> Result<BenchmarkRecord, CorpusError> {
    let map = v
        .get("options")
        .ok_or_else(|| malformed(line, "options", "missing"))?
        .as_object()
        .ok_or_else(|| malformed(line, "options", "expected an object keyed by letter"))?;
    let mut options = Vec::new();
    for i in 0..map.len() {
        let key = letter(i).to_string();
        let o = map
            .get(&key)
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(line, "options", format!("missing option {key}")))?;
        options.push(o.to_string());
    }
    let ans = req_str(v, "answer_idx", line)?;
    let g = match ans.chars().next().and_then(letter_index) {
        Some(g) if ans.len() == 1 => g as i64,
        _ => return Err(malformed(line, "answer_idx", format!("not a letter: {ans:?}"))),
    };
    let g = gold(g, options.len(), line)?;
    let id = match v.get("id") {
        Some(_) => req_str(v, "id", line)?,
        None => format!("{tag}-{line}"),
    };
    let subject = match v.get("meta_info") {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    };
    Ok(BenchmarkRecord {
        id,
        question: req_str(v, "question", line)?,
        options,
        gold_index: g,
        subject,
        dataset_tag: String::new(),
    })
}

fn from_medmcqa(v: &Value, line: usize) -> Result<BenchmarkRecord, CorpusError> {
    let options = ["opa", "opb", "opc", "opd"]
        .iter()
        .map(|f| req_str(v, f, line))
        .collect::<Result<Vec<_>, _>>()?;
    let cop = req_int(v, "cop", line)?;
    let g = gold(cop - 1, options.len(), line)?;
    Ok(BenchmarkRecord {
        id: req_str(v, "id", line)?,
        question: req_str(v, "question", line)?,
        options,
        gold_index: g,
        subject: opt_str(v, "subject_name", line)?,
        dataset_tag: String::new(),
    })
}

fn from_mmlu(v: &Value, line: usize, tag: &str) -> Result<BenchmarkRecord, CorpusError> {
    let options = str_list(v, "choices", line)?;
    let g = gold(req_int(v, "answer", line)?, options.len(), line)?;
    let id = match v.get("id") {
        Some(_) => req_str(v, "id", line)?,
        None => format!("{tag}-{line}"),
    };
    Ok(BenchmarkRecord {
        id,
        question: req_str(v, "question", line)?,
        options,
        gold_index: g,
        subject: opt_str(v, "subject", line)?,
        dataset_tag: String::new(),
    })
}

/// Canonical JSONL for a record list, one line per record.
pub fn to_canonical_jsonl(records: &[BenchmarkRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_canonical_line());
        s.push('\n');
    }
    s
}

/// Seeded per-record generator used for shuffling.
pub fn record_rng(seed: u64, record_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("{seed}:{record_id}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(b))
}

/// Uniform integer in `0..bound` by rejection sampling.
pub fn bounded(rng: &mut impl RngCore, bound: u64) -> u64 {
    assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Permutation `perm` such that shuffled option `i` is the original option `perm[i]`.
pub fn shuffle_permutation(record_id: &str, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = record_rng(seed, record_id);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = bounded(&mut rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Apply a permutation (`new[i] = old[perm[i]]`) and remap the gold index.
pub fn permute_options(record: &BenchmarkRecord, perm: &[usize]) -> BenchmarkRecord {
    assert_eq!(perm.len(), record.options.len(), "permutation length");
    let mut out = record.clone();
    out.options = perm.iter().map(|&p| record.options[p].clone()).collect();
    out.gold_index = perm
        .iter()
        .position(|&p| p == record.gold_index)
        .expect("permutation covers gold");
    out
}

pub fn shuffle_options(record: &BenchmarkRecord, seed: u64) -> Result<BenchmarkRecord, CorpusError> {
    record.validate().map_err(|reason| CorpusError::Invalid {
        id: record.id.clone(),
        reason,
    })?;
    let perm = shuffle_permutation(&record.id, record.options.len(), seed);
    Ok(permute_options(record, &perm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub record_count: usize,
    pub option_arity_histogram: BTreeMap<usize, usize>,
    pub mean_question_words: f64,
    pub subject_counts: BTreeMap<String, usize>,
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn summarize(records: &[BenchmarkRecord]) -> DatasetSummary {
    let mut arity = BTreeMap::new();
    let mut subjects = BTreeMap::new();
    let mut words = 0usize;
    for r in records {
        *arity.entry(r.options.len()).or_insert(0) += 1;
        if let Some(s) = &r.subject {
            *subjects.entry(s.clone()).or_insert(0) += 1;
        }
        words += word_count(&r.question);
    }
    DatasetSummary {
        record_count: records.len(),
        option_arity_histogram: arity,
        mean_question_words: if records.is_empty() {
            0.0
        } else {
            words as f64 / records.len() as f64
        },
        subject_counts: subjects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, opts: &[&str], gold: usize) -> BenchmarkRecord {
        BenchmarkRecord {
            id: id.into(),
            question: "What?".into(),
            options: opts.iter().map(|s| s.to_string()).collect(),
            gold_index: gold,
            subject: None,
            dataset_tag: "t".into(),
        }
    }

    #[test]
    fn rejects_duplicate_options_after_trim() {
        assert!(rec("a", &["x", " x "], 0).validate().is_err());
        assert!(rec("a", &["x"], 0).validate().is_err());
        assert!(rec("a", &["x", "y"], 2).validate().is_err());
        assert!(rec("a", &["x", "y"], 1).validate().is_ok());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let r = rec("a", &["p", "q", "r", "s"], 2);
        assert_eq!(permute_options(&r, &[0, 1, 2, 3]), r);
    }

    #[test]
    fn permutation_remaps_gold() {
        let r = rec("a", &["p", "q", "r", "s"], 2);
        let s = permute_options(&r, &[3, 2, 1, 0]);
        assert_eq!(s.options, vec!["s", "r", "q", "p"]);
        assert_eq!(s.gold_index, 1);
        assert_eq!(s.gold_text(), "r");
    }

    #[test]
    fn bounded_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in 1..50 {
            assert!(bounded(&mut rng, b) < b);
        }
    }

    #[test]
    fn malformed_reports_line_and_field() {
        let text = "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"x\",\"y\"],\"gold\":0}\n\n{\"id\":\"b\",\"question\":\"q\",\"gold\":0}\n";
        match parse_benchmark(text, Format::Canonical, "t") {
            Err(CorpusError::Malformed { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "options");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn medmcqa_cop_is_one_based() {
        let text = r#"{"id":"m1","question":"q","opa":"a","opb":"b","opc":"c","opd":"d","cop":3,"subject_name":"Anatomy"}"#;
        let r = &parse_benchmark(text, Format::MedMcqa, "medmcqa").unwrap()[0];
        assert_eq!(r.gold_index, 2);
        assert_eq!(r.subject.as_deref(), Some("Anatomy"));
    }

    #[test]
    fn medqa_adapter_assigns_ids() {
        let text = r#"{"question":"q","options":{"A":"a","B":"b","C":"c","D":"d"},"answer_idx":"D"}"#;
        let r = &parse_benchmark(text, Format::MedQa, "medqa-4").unwrap()[0];
        assert_eq!(r.id, "medqa-4-1");
        assert_eq!(r.gold_index, 3);
    }

    #[test]
    fn mmlu_gold_out_of_range() {
        let text = r#"{"question":"q","choices":["a","b"],"answer":2,"subject":"anatomy"}"#;
        assert!(matches!(
            parse_benchmark(text, Format::Mmlu, "mmlu-medical"),
            Err(CorpusError::GoldOutOfRange { line: 1, gold: 2, arity: 2 })
        ));
    }
}
