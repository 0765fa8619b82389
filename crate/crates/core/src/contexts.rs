//! Generated context bundles: scrubbing, fingerprinted cache, generation.
//!
//! A bundle holds `l` option-focused contexts followed by `m` option-free
//! ones. Each context is keyed by a fingerprint over the template content,
//! the shots, the record, the sampling parameters, its view and ordinal, and
//! the generator model. A bundle whose fingerprints are all cached costs no
//! endpoint calls; a bundle is only written once every context is in hand.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use futures::stream::{self, StreamExt, TryStreamExt};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, BenchmarkRecord};
use crate::gateway::{Client, GatewayError, GenerationRequest, SamplingParams};
use crate::hashing::{fingerprint, sha256_hex};
use crate::prompt::{ContextView, Grounding, PromptError, Renderer, ShotExample};

pub const DEFAULT_L: usize = 3;
pub const DEFAULT_M: usize = 2;

const DEFAULT_SCRUB_RULES: &str = include_str!("../assets/scrub_rules.txt");

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("record `{record}`: {view:?} context {ordinal} is empty after scrubbing, even after one regeneration")]
    ScrubbedEmpty {
        record: String,
        view: ContextView,
        ordinal: usize,
    },
    #[error("cache {path}: {reason}")]
    Cache { path: String, reason: String },
    #[error("scrub rule `{rule}`: {reason}")]
    Rule { rule: String, reason: String },
}

/// Answer-revealing sentence patterns.
#[derive(Debug, Clone)]
pub struct ScrubRules {
    patterns: Vec<Regex>,
    source: String,
}

impl Default for ScrubRules {
    fn default() -> Self {
        ScrubRules::parse(DEFAULT_SCRUB_RULES).expect("default scrub rules compile")
    }
}

impl ScrubRules {
    /// One regex per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ContextError> {
        let mut patterns = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let re = RegexBuilder::new(line)
                .case_insensitive(true)
                .build()
                .map_err(|e| ContextError::Rule {
                    rule: line.to_string(),
                    reason: e.to_string(),
                })?;
            patterns.push(re);
        }
        Ok(ScrubRules {
            patterns,
            source: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        let text = std::fs::read_to_string(path).map_err(|e| ContextError::Rule {
            rule: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.source.as_bytes())
    }

    fn matches(&self, sentence: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(sentence))
    }

    /// Drop every sentence matching a rule. Sentences end at `.`, `?`, `!` or
    /// a newline (the delimiter stays with its sentence). The result is trimmed.
    pub fn scrub(&self, text: &str) -> String {
        let kept: String = sentences(text).filter(|s| !self.matches(s)).collect();
        kept.trim().to_string()
    }
}

/// Split into pieces each ending with its delimiter (the last may have none).
pub fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split_inclusive(['.', '?', '!', '\n'])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedContext {
    pub record_id: String,
    pub text: String,
    pub view: ContextView,
    pub ordinal: usize,
    pub generator_model: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub record_id: String,
    pub contexts: Vec<GeneratedContext>,
    pub l: usize,
    pub m: usize,
}

impl ContextBundle {
    pub fn grounding(&self) -> Vec<Grounding> {
        self.contexts
            .iter()
            .map(|c| Grounding {
                text: c.text.clone(),
                view: c.view,
            })
            .collect()
    }

    /// Option-focused contexts form a prefix and sizes match `l + m`.
    pub fn check(&self) -> bool {
        let focused = self
            .contexts
            .iter()
            .take_while(|c| c.view == ContextView::OptionFocused)
            .count();
        focused == self.l
            && self.contexts.len() == self.l + self.m
            && self.contexts[focused..].iter().all(|c| c.view == ContextView::OptionFree)
    }
}

/// Context cache: `contexts.jsonl` plus an `index.json` sidecar mapping
/// fingerprints to line numbers. Appends are serialized by a mutex.
#[derive(Debug)]
pub struct ContextCache {
    dir: PathBuf,
    inner: Mutex<CacheInner>,
}

#[derive(Debug, Default)]
struct CacheInner {
    by_fp: HashMap<String, GeneratedContext>,
    order: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheIndex {
    version: u32,
    entries: BTreeMap<String, usize>,
}

impl ContextCache {
    pub const FILE: &'static str = "contexts.jsonl";
    pub const INDEX: &'static str = "index.json";

    pub fn open(dir: &Path) -> Result<Self, ContextError> {
        let err = |reason: String| ContextError::Cache {
            path: dir.display().to_string(),
            reason,
        };
        std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        let mut inner = CacheInner::default();
        let file = dir.join(Self::FILE);
        if file.exists() {
            let text = std::fs::read_to_string(&file).map_err(|e| err(e.to_string()))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let c: GeneratedContext =
                    serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                if !inner.by_fp.contains_key(&c.fingerprint) {
                    inner.order.push(c.fingerprint.clone());
                }
                inner.by_fp.insert(c.fingerprint.clone(), c);
            }
        }
        Ok(ContextCache {
            dir: dir.to_path_buf(),
            inner: Mutex::new(inner),
        })
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(Self::FILE)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fp: &str) -> Option<GeneratedContext> {
        self.inner.lock().unwrap().by_fp.get(fp).cloned()
    }

    /// Append contexts in one write; entries already present are skipped.
    pub fn put_all(&self, contexts: &[GeneratedContext]) -> Result<(), ContextError> {
        let err = |reason: String| ContextError::Cache {
            path: self.dir.display().to_string(),
            reason,
        };
        let mut inner = self.inner.lock().unwrap();
        let fresh: Vec<&GeneratedContext> = contexts
            .iter()
            .filter(|c| !inner.by_fp.contains_key(&c.fingerprint))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for c in &fresh {
            buf.push_str(&serde_json::to_string(c).expect("context serializes"));
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path())
            .map_err(|e| err(e.to_string()))?;
        f.write_all(buf.as_bytes()).map_err(|e| err(e.to_string()))?;
        f.sync_data().map_err(|e| err(e.to_string()))?;
        for c in fresh {
            inner.order.push(c.fingerprint.clone());
            inner.by_fp.insert(c.fingerprint.clone(), c.clone());
        }
        self.write_index(&inner)
    }

    /// Rewrite the cache sorted by record, ordinal and fingerprint. Appends
    /// land in completion order; compacting after a run makes the file
    /// independent of scheduling.
    pub fn compact(&self) -> Result<(), ContextError> {
        let mut inner = self.inner.lock().unwrap();
        let mut order = inner.order.clone();
        order.sort_by(|a, b| {
            let (x, y) = (&inner.by_fp[a], &inner.by_fp[b]);
            (&x.record_id, x.ordinal, &x.fingerprint).cmp(&(&y.record_id, y.ordinal, &y.fingerprint))
        });
        if order == inner.order {
            return Ok(());
        }
        let mut buf = String::new();
        for fp in &order {
            buf.push_str(&serde_json::to_string(&inner.by_fp[fp]).expect("context serializes"));
            buf.push('\n');
        }
        self.replace(Self::FILE, buf.as_bytes())?;
        inner.order = order;
        self.write_index(&inner)
    }

    fn write_index(&self, inner: &CacheInner) -> Result<(), ContextError> {
        let index = CacheIndex {
            version: 1,
            entries: inner.order.iter().enumerate().map(|(i, fp)| (fp.clone(), i + 1)).collect(),
        };
        self.replace(Self::INDEX, serde_json::to_string_pretty(&index).unwrap().as_bytes())
    }

    /// Atomic write through a temporary file.
    fn replace(&self, name: &str, bytes: &[u8]) -> Result<(), ContextError> {
        let err = |reason: String| ContextError::Cache {
            path: self.dir.display().to_string(),
            reason,
        };
        let tmp = self.dir.join(format!("{name}.tmp"));
        let mut t = File::create(&tmp).map_err(|e| err(e.to_string()))?;
        t.write_all(bytes).map_err(|e| err(e.to_string()))?;
        t.sync_data().map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, self.dir.join(name)).map_err(|e| err(e.to_string()))
    }

    /// All cached contexts in insertion order.
    pub fn all(&self) -> Vec<GeneratedContext> {
        let inner = self.inner.lock().unwrap();
        inner.order.iter().map(|fp| inner.by_fp[fp].clone()).collect()
    }
}

/// Everything that determines the generated contexts of a record.
#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub l: usize,
    pub m: usize,
    pub params: SamplingParams,
    pub model: String,
    pub focused_shots: Vec<ShotExample>,
    pub free_shots: Vec<ShotExample>,
    pub concurrency: usize,
}

impl GenerationConfig {
    pub fn new(model: &str, focused_shots: Vec<ShotExample>, free_shots: Vec<ShotExample>) -> Self {
        GenerationConfig {
            l: DEFAULT_L,
            m: DEFAULT_M,
            params: SamplingParams::context_generation(),
            model: model.to_string(),
            focused_shots,
            free_shots,
            concurrency: 4,
        }
    }
}

pub fn shots_hash(shots: &[ShotExample]) -> String {
    sha256_hex(serde_json::to_string(shots).expect("shots serialize").as_bytes())
}

/// Fingerprint of one context slot.
#[allow(clippy::too_many_arguments)]
pub fn context_fingerprint(
    template_hash: &str,
    shots_hash: &str,
    scrub_hash: &str,
    record: &BenchmarkRecord,
    params: &SamplingParams,
    view: ContextView,
    ordinal: usize,
    model: &str,
) -> String {
    let view_s = match view {
        ContextView::OptionFocused => "option-focused",
        ContextView::OptionFree => "option-free",
        ContextView::Retrieved => "retrieved",
    };
    fingerprint(&[
        template_hash,
        shots_hash,
        scrub_hash,
        &record.id,
        &sha256_hex(record.to_canonical_line().as_bytes()),
        &params.canonical(),
        view_s,
        &ordinal.to_string(),
        model,
    ])
}

/// Outcome of one bundle request.
#[derive(Debug, Clone)]
pub struct BundleOutcome {
    pub bundle: ContextBundle,
    pub cache_hit: bool,
    pub calls: usize,
}

pub struct ContextFactory<'a> {
    pub renderer: &'a Renderer,
    pub rules: &'a ScrubRules,
    pub cache: &'a ContextCache,
    pub client: &'a Client,
    pub config: &'a GenerationConfig,
}

impl ContextFactory<'_> {
    fn slots(&self, record: &BenchmarkRecord) -> Result<Vec<(ContextView, usize, String)>, ContextError> {
        let fam = self.renderer.templates.generation()?;
        let ta = fam.template(crate::prompt::Purpose::OptionFocused)?.content_hash();
        let tb = fam.template(crate::prompt::Purpose::OptionFree)?.content_hash();
        let sa = shots_hash(&self.config.focused_shots);
        let sb = shots_hash(&self.config.free_shots);
        let rh = self.rules.content_hash();
        let c = self.config;
        let mut out = Vec::with_capacity(c.l + c.m);
        for i in 0..c.l {
            let fp = context_fingerprint(&ta, &sa, &rh, record, &c.params, ContextView::OptionFocused, i, &c.model);
            out.push((ContextView::OptionFocused, i, fp));
        }
        for i in 0..c.m {
            let fp = context_fingerprint(&tb, &sb, &rh, record, &c.params, ContextView::OptionFree, i, &c.model);
            out.push((ContextView::OptionFree, i, fp));
        }
        Ok(out)
    }

    async fn request(&self, prompt: &str, n: usize, seed_shift: u64) -> Result<Vec<String>, ContextError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut params = self.config.params.clone();
        params.seed = Some(params.seed.unwrap_or(0).wrapping_add(seed_shift));
        let req = GenerationRequest::new(prompt, &params, n as u32);
        Ok(self.client.complete(&req).await?.texts)
    }

    /// The cached bundle for `record` under this configuration, if complete.
    pub fn cached_bundle(&self, record: &BenchmarkRecord) -> Result<Option<ContextBundle>, ContextError> {
        let contexts: Option<Vec<GeneratedContext>> =
            self.slots(record)?.iter().map(|(_, _, fp)| self.cache.get(fp)).collect();
        Ok(contexts.map(|contexts| ContextBundle {
            record_id: record.id.clone(),
            contexts,
            l: self.config.l,
            m: self.config.m,
        }))
    }

    /// Bundle for one record, from cache when every slot is present.
    pub async fn generate_bundle(&self, record: &BenchmarkRecord) -> Result<BundleOutcome, ContextError> {
        let c = self.config;
        let slots = self.slots(record)?;
        let cached: Vec<Option<GeneratedContext>> = slots.iter().map(|(_, _, fp)| self.cache.get(fp)).collect();
        if cached.iter().all(Option::is_some) {
            return Ok(BundleOutcome {
                bundle: ContextBundle {
                    record_id: record.id.clone(),
                    contexts: cached.into_iter().map(Option::unwrap).collect(),
                    l: c.l,
                    m: c.m,
                },
                cache_hit: true,
                calls: 0,
            });
        }
        let pa = self.renderer.render_option_focused(record, &c.focused_shots)?;
        let pb = self.renderer.render_option_free(record, &c.free_shots)?;
        let (ra, rb) = futures::join!(self.request(&pa, c.l, 0), self.request(&pb, c.m, 0));
        let mut calls = (c.l > 0) as usize + (c.m > 0) as usize;
        let raw: Vec<String> = ra?.into_iter().chain(rb?).collect();
        let mut contexts = Vec::with_capacity(slots.len());
        for ((view, ordinal, fp), text) in slots.into_iter().zip(raw) {
            let mut clean = self.rules.scrub(&text);
            if clean.is_empty() {
                let prompt = if view == ContextView::OptionFocused { &pa } else { &pb };
                let shift = 1_000_003 + ordinal as u64;
                let again = self.request(prompt, 1, shift).await?;
                calls += 1;
                clean = self.rules.scrub(again.first().map(String::as_str).unwrap_or(""));
                if clean.is_empty() {
                    return Err(ContextError::ScrubbedEmpty {
                        record: record.id.clone(),
                        view,
                        ordinal,
                    });
                }
            }
            contexts.push(GeneratedContext {
                record_id: record.id.clone(),
                text: clean,
                view,
                ordinal,
                generator_model: c.model.clone(),
                fingerprint: fp,
            });
        }
        self.cache.put_all(&contexts)?;
        Ok(BundleOutcome {
            bundle: ContextBundle {
                record_id: record.id.clone(),
                contexts,
                l: c.l,
                m: c.m,
            },
            cache_hit: false,
            calls,
        })
    }

    /// Bundles for many records, in input order, `concurrency` at a time.
    pub async fn generate_all(&self, records: &[BenchmarkRecord]) -> Result<Vec<BundleOutcome>, ContextError> {
        stream::iter(records.iter().map(|r| self.generate_bundle(r)))
            .buffered(self.config.concurrency.max(1))
            .try_collect()
            .await
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub contexts: usize,
    pub mean_words: f64,
    pub max_words: usize,
    pub bin_width: usize,
    /// `(bin start, count)` for non-empty bins, ascending.
    pub histogram: Vec<(usize, usize)>,
}

pub fn bundle_length_stats(bundles: &[ContextBundle], bin_width: usize) -> LengthStats {
    let bin_width = bin_width.max(1);
    let counts: Vec<usize> = bundles
        .iter()
        .flat_map(|b| b.contexts.iter().map(|c| word_count(&c.text)))
        .collect();
    let mut hist = BTreeMap::new();
    for &w in &counts {
        *hist.entry(w / bin_width * bin_width).or_insert(0usize) += 1;
    }
    LengthStats {
        contexts: counts.len(),
        mean_words: if counts.is_empty() {
            0.0
        } else {
            counts.iter().sum::<usize>() as f64 / counts.len() as f64
        },
        max_words: counts.iter().copied().max().unwrap_or(0),
        bin_width,
        histogram: hist.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportLine {
    pub id: String,
    pub view: ContextView,
    pub ordinal: usize,
    pub text: String,
}

/// Release format: one `{"id","view","ordinal","text"}` line per context.
pub fn export_jsonl(bundles: &[ContextBundle]) -> String {
    let mut s = String::new();
    for b in bundles {
        for c in &b.contexts {
            let line = ExportLine {
                id: c.record_id.clone(),
                view: c.view,
                ordinal: c.ordinal,
                text: c.text.clone(),
            };
            s.push_str(&serde_json::to_string(&line).unwrap());
            s.push('\n');
        }
    }
    s
}

/// Group cached contexts into bundles for `records` (in record order).
pub fn bundles_from_contexts(
    records: &[BenchmarkRecord],
    contexts: &[GeneratedContext],
    l: usize,
    m: usize,
) -> Vec<ContextBundle> {
    let mut by_record: HashMap<&str, Vec<&GeneratedContext>> = HashMap::new();
    for c in contexts {
        by_record.entry(c.record_id.as_str()).or_default().push(c);
    }
    records
        .iter()
        .filter_map(|r| {
            let cs = by_record.get(r.id.as_str())?;
            let pick = |view: ContextView, n: usize| -> Option<Vec<GeneratedContext>> {
                (0..n)
                    .map(|i| cs.iter().rev().find(|c| c.view == view && c.ordinal == i).map(|c| (*c).clone()))
                    .collect()
            };
            let mut all = pick(ContextView::OptionFocused, l)?;
            all.extend(pick(ContextView::OptionFree, m)?);
            Some(ContextBundle {
                record_id: r.id.clone(),
                contexts: all,
                l,
                m,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scrub_drops_answer_sentence() {
        let r = ScrubRules::default();
        assert_eq!(r.scrub("X is a drug. The answer is (D) Nitrofurantoin."), "X is a drug.");
        assert_eq!(r.scrub("Plain text. Nothing else."), "Plain text. Nothing else.");
        assert_eq!(r.scrub("The correct answer is B. Therefore the answer is B!"), "");
        assert_eq!(r.scrub("Fact one.\nOption (C) is correct\nFact two."), "Fact one.\nFact two.");
        assert_eq!(r.scrub("THE CORRECT OPTION: A."), "");
    }

    #[test]
    fn custom_rules() {
        let r = ScrubRules::parse("# comment\n\nsecret\n").unwrap();
        assert_eq!(r.scrub("keep. a SECRET here. keep too"), "keep. keep too");
        assert!(ScrubRules::parse("(unclosed").is_err());
    }

    #[test]
    fn length_stats_by_hand() {
        let mk = |t: &str| GeneratedContext {
            record_id: "r".into(),
            text: t.into(),
            view: ContextView::OptionFocused,
            ordinal: 0,
            generator_model: "m".into(),
            fingerprint: t.into(),
        };
        let b = ContextBundle {
            record_id: "r".into(),
            contexts: vec![mk("a b c"), mk("a b c d e"), mk("a"), mk("a b c d e f g h i j k l")],
            l: 4,
            m: 0,
        };
        let s = bundle_length_stats(&[b], 5);
        assert_eq!(s.contexts, 4);
        assert_eq!(s.mean_words, 21.0 / 4.0);
        assert_eq!(s.max_words, 12);
        assert_eq!(s.histogram, vec![(0, 2), (5, 1), (10, 1)]);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ContextCache::open(dir.path()).unwrap();
        let g = GeneratedContext {
            record_id: "r".into(),
            text: "t".into(),
            view: ContextView::OptionFree,
            ordinal: 1,
            generator_model: "m".into(),
            fingerprint: "fp".into(),
        };
        c.put_all(&[g.clone(), g.clone()]).unwrap();
        c.put_all(std::slice::from_ref(&g)).unwrap();
        drop(c);
        let c = ContextCache::open(dir.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("fp"), Some(g));
        assert!(dir.path().join(ContextCache::INDEX).exists());
    }

    #[test]
    fn compaction_orders_by_record_and_ordinal() {
        let ctx = |rec: &str, ordinal: usize| GeneratedContext {
            record_id: rec.into(),
            text: format!("{rec}{ordinal}"),
            view: ContextView::OptionFocused,
            ordinal,
            generator_model: "m".into(),
            fingerprint: format!("fp-{rec}-{ordinal}"),
        };
        let written = |order: &[GeneratedContext]| {
            let dir = tempfile::tempdir().unwrap();
            let c = ContextCache::open(dir.path()).unwrap();
            for g in order {
                c.put_all(std::slice::from_ref(g)).unwrap();
            }
            c.compact().unwrap();
            let text = std::fs::read_to_string(c.path()).unwrap();
            drop(c);
            let reopened = ContextCache::open(dir.path()).unwrap();
            (text, reopened.all())
        };
        let (a, all) = written(&[ctx("b", 0), ctx("a", 1), ctx("a", 0)]);
        let (b, _) = written(&[ctx("a", 0), ctx("b", 0), ctx("a", 1)]);
        assert_eq!(a, b);
        assert_eq!(all, [ctx("a", 0), ctx("a", 1), ctx("b", 0)]);
    }
}
