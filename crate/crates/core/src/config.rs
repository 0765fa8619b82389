//! Declarative run configuration, loaded from TOML.
//!
//! Relative paths resolve against the directory holding the config file,
//! so a run directory can be moved or replayed elsewhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Format;
use crate::eval::sweeps::DEFAULT_SHUFFLE_SEEDS;
use crate::gateway::{EndpointProfile, Role};
use crate::hashing::sha256_hex;
use crate::retrieval::Splitter;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    pub tag: String,
    /// Training split, used by clustering and the train+test mixed corpus.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
}

fn default_format() -> String {
    "canonical".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub max_parallel: Option<usize>,
    #[serde(default)]
    pub backoff_base_ms: Option<u64>,
}

impl EndpointConfig {
    pub fn profile(&self, role: Role) -> EndpointProfile {
        let mut p = EndpointProfile::new(&self.base_url, role, &self.model);
        p.token_env = self.token_env.clone();
        p.timeout = self.timeout_secs.map(Duration::from_secs_f64);
        if let Some(r) = self.max_retries {
            p.max_retries = r;
        }
        if let Some(n) = self.max_parallel {
            p.max_parallel = n;
        }
        if let Some(b) = self.backoff_base_ms {
            p.backoff_base_ms = b;
        }
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsConfig {
    #[serde(default)]
    pub generation: Option<EndpointConfig>,
    #[serde(default)]
    pub reader: Option<EndpointConfig>,
    #[serde(default)]
    pub embedding: Option<EndpointConfig>,
    #[serde(default)]
    pub rerank: Option<EndpointConfig>,
    #[serde(default)]
    pub judge: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub family: String,
    /// Shot pair id; defaults by family and benchmark.
    #[serde(default)]
    pub shot_pair: Option<String>,
    #[serde(default)]
    pub shots_file: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub scrub_rules: Option<PathBuf>,
    #[serde(default)]
    pub judge_dir: Option<PathBuf>,
    #[serde(default)]
    pub context_separator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_frequency_penalty")]
    pub frequency_penalty: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_l() -> usize {
    3
}
fn default_m() -> usize {
    2
}
fn default_temperature() -> f64 {
    0.9
}
fn default_frequency_penalty() -> f64 {
    1.95
}
fn default_max_new_tokens() -> u32 {
    512
}
fn default_concurrency() -> usize {
    4
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            l: default_l(),
            m: default_m(),
            temperature: default_temperature(),
            frequency_penalty: default_frequency_penalty(),
            max_new_tokens: default_max_new_tokens(),
            seed: 0,
            concurrency: default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_reader_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_k() -> usize {
    5
}
fn default_reader_tokens() -> u32 {
    64
}

impl Default for ReaderSettings {
    fn default() -> Self {
        ReaderSettings {
            k: default_k(),
            max_new_tokens: default_reader_tokens(),
            concurrency: default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSettings {
    /// JSON-lines knowledge base of `{"id", "text"}` documents.
    #[serde(default)]
    pub kb_path: Option<PathBuf>,
    #[serde(default = "default_k_retrieve")]
    pub k_retrieve: usize,
    #[serde(default = "default_k_keep")]
    pub k_keep: usize,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default = "default_embed_batch")]
    pub embed_batch: usize,
    #[serde(default = "default_scope")]
    pub mixed_scope: crate::retrieval::CorpusScope,
}

fn default_k_retrieve() -> usize {
    10
}
fn default_k_keep() -> usize {
    5
}
fn default_chunk_size() -> usize {
    1000
}
fn default_chunk_overlap() -> usize {
    200
}
fn default_embed_batch() -> usize {
    32
}
fn default_scope() -> crate::retrieval::CorpusScope {
    crate::retrieval::CorpusScope::KbPlusTest
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            kb_path: None,
            k_retrieve: default_k_retrieve(),
            k_keep: default_k_keep(),
            chunk_size: default_chunk_size(),
            chunk_overlap: default_chunk_overlap(),
            embed_batch: default_embed_batch(),
            mixed_scope: default_scope(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_seeds")]
    pub shuffle_seeds: Vec<u64>,
    #[serde(default = "default_sweep")]
    pub sweep_ks: Vec<usize>,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
    #[serde(default = "default_concurrency")]
    pub judge_concurrency: usize,
    #[serde(default = "default_bin")]
    pub length_bin_width: usize,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SHUFFLE_SEEDS.to_vec()
}
fn default_sweep() -> Vec<usize> {
    (0..=5).collect()
}
fn default_recall_ks() -> Vec<usize> {
    (1..=15).collect()
}
fn default_bin() -> usize {
    25
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            shuffle_seeds: default_seeds(),
            sweep_ks: default_sweep(),
            recall_ks: default_recall_ks(),
            judge_concurrency: default_concurrency(),
            length_bin_width: default_bin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSettings {
    #[serde(default = "default_clusters")]
    pub k: usize,
    #[serde(default = "default_per_cluster")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_clusters() -> usize {
    crate::cluster::DEFAULT_CLUSTERS
}
fn default_per_cluster() -> usize {
    crate::cluster::DEFAULT_PER_CLUSTER
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            k: default_clusters(),
            n: default_per_cluster(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub endpoints: EndpointsConfig,
    pub prompt: PromptConfig,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub reader: ReaderSettings,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub cluster: ClusterSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Load, then apply `section.key=value` overrides before validation.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&apply_overrides(&text, overrides)?, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn format(&self) -> Result<Format, ConfigError> {
        self.dataset.format.parse().map_err(|_| {
            ConfigError::Invalid(format!("unknown dataset format `{}`", self.dataset.format))
        })
    }

    pub fn splitter(&self) -> Result<Splitter, ConfigError> {
        Splitter::new(self.retrieval.chunk_size, self.retrieval.chunk_overlap).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks that need no network or file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.format()?;
        self.splitter()?;
        if self.dataset.tag.is_empty() {
            return bad("dataset.tag must not be empty".into());
        }
        if self.prompt.family.is_empty() {
            return bad("prompt.family must not be empty".into());
        }
        let g = &self.generation;
        if g.l + g.m == 0 {
            return bad("generation: l + m must be at least 1".into());
        }
        if self.reader.k > g.l + g.m {
            return bad(format!("reader.k = {} exceeds l + m = {}", self.reader.k, g.l + g.m));
        }
        if g.concurrency == 0 || self.reader.concurrency == 0 || self.eval.judge_concurrency == 0 {
            return bad("concurrency settings must be at least 1".into());
        }
        let r = &self.retrieval;
        if r.k_keep == 0 || r.k_keep > r.k_retrieve {
            return bad(format!("retrieval: need 1 <= k_keep <= k_retrieve, got {} and {}", r.k_keep, r.k_retrieve));
        }
        if r.embed_batch == 0 {
            return bad("retrieval.embed_batch must be at least 1".into());
        }
        if let Some(k) = self.eval.recall_ks.iter().find(|&&k| k == 0 || k > 15) {
            return bad(format!("eval.recall_ks: {k} is outside 1..=15"));
        }
        if self.eval.length_bin_width == 0 {
            return bad("eval.length_bin_width must be at least 1".into());
        }
        if self.cluster.k == 0 || self.cluster.n == 0 {
            return bad("cluster: k and n must be at least 1".into());
        }
        for (slot, e) in self.endpoint_profiles() {
            e.validate().map_err(|m| ConfigError::Invalid(format!("endpoints.{}: {m}", slot.key())))?;
        }
        Ok(())
    }

    /// Profiles from the config file, falling back to `CTXGENIE_<SLOT>_URL`.
    pub fn endpoint_profiles(&self) -> BTreeMap<Slot, EndpointProfile> {
        let e = &self.endpoints;
        let mut out = BTreeMap::new();
        for (slot, cfg) in [
            (Slot::Generation, &e.generation),
            (Slot::Reader, &e.reader),
            (Slot::Embedding, &e.embedding),
            (Slot::Rerank, &e.rerank),
            (Slot::Judge, &e.judge),
        ] {
            let p = match cfg {
                Some(c) => Some(c.profile(slot.role())),
                None => EndpointProfile::from_env_prefix(slot.env_prefix(), slot.role(), ""),
            };
            if let Some(p) = p {
                out.insert(slot, p);
            }
        }
        out
    }

    /// Canonical JSON snapshot; this is what reports embed and what is hashed.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.snapshot().to_string().as_bytes())
    }
}

/// A configured endpoint. The reader speaks the generation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Generation,
    Reader,
    Embedding,
    Rerank,
    Judge,
}

impl Slot {
    pub fn role(self) -> Role {
        match self {
            Slot::Generation | Slot::Reader => Role::Generation,
            Slot::Embedding => Role::Embedding,
            Slot::Rerank => Role::Rerank,
            Slot::Judge => Role::Judge,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Slot::Generation => "generation",
            Slot::Reader => "reader",
            Slot::Embedding => "embedding",
            Slot::Rerank => "rerank",
            Slot::Judge => "judge",
        }
    }

    pub fn env_prefix(self) -> &'static str {
        match self {
            Slot::Reader => "CTXGENIE_READER",
            s => s.role().env_prefix(),
        }
    }
}

/// Set dotted keys in TOML text. A value is read as a TOML literal when it
/// parses as one (`5`, `true`, `[1, 2]`, `"x"`) and as a bare string otherwise.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, ConfigError> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override `{o}` is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Invalid(format!("override `{o}` has an empty key segment")));
        }
        let value = format!("v = {}", raw.trim())
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let (last, parents) = path.split_last().expect("split yields a segment");
        let mut table = &mut root;
        for seg in parents {
            let entry = table
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("override `{o}`: `{seg}` is not a table")))?;
        }
        table.insert(last.to_string(), value);
    }
    toml::to_string(&root).map_err(|e| ConfigError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[dataset]
path = "data.jsonl"
tag = "medqa"
[prompt]
family = "zephyr"
[endpoints.generation]
base_url = "http://127.0.0.1:9/v1"
model = "gen"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL, Path::new("/runs/a")).unwrap();
        assert_eq!(c.generation.l, 3);
        assert_eq!(c.generation.m, 2);
        assert_eq!(c.reader.k, 5);
        assert_eq!(c.retrieval.k_retrieve, 10);
        assert_eq!(c.retrieval.chunk_size, 1000);
        assert_eq!(c.eval.shuffle_seeds, DEFAULT_SHUFFLE_SEEDS.to_vec());
        assert_eq!(c.cluster.k, 5);
        assert_eq!(c.out_dir(), PathBuf::from("/runs/a/out"));
        assert_eq!(c.endpoint_profiles()[&Slot::Generation].model, "gen");
    }

    #[test]
    fn hash_ignores_base_dir() {
        let a = RunConfig::parse(MINIMAL, Path::new("/x")).unwrap();
        let b = RunConfig::parse(MINIMAL, Path::new("/y")).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("tag = \"medqa\"", "tag = \"medqa\"\nformat = \"csv\""),
            ("family = \"zephyr\"", "family = \"zephyr\"\n[reader]\nk = 9"),
            ("family = \"zephyr\"", "family = \"zephyr\"\n[retrieval]\nk_keep = 11"),
            ("family = \"zephyr\"", "family = \"zephyr\"\n[retrieval]\nchunk_overlap = 1000"),
            ("http://127.0.0.1:9/v1", "ftp://x"),
            ("tag = \"medqa\"", "tag = \"medqa\"\nbogus = 1"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(RunConfig::parse(&text, Path::new(".")).is_err(), "{to}");
        }
    }

    #[test]
    fn overrides_edit_nested_keys() {
        let text = "output_dir = \"out\"\n[reader]\nk = 5\n";
        let sets = [
            "reader.k=3".to_string(),
            "output_dir=runs/a".to_string(),
            "eval.shuffle_seeds=[1, 2]".to_string(),
        ];
        let t: toml::Table = apply_overrides(text, &sets).unwrap().parse().unwrap();
        assert_eq!(t["reader"]["k"].as_integer(), Some(3));
        assert_eq!(t["output_dir"].as_str(), Some("runs/a"));
        assert_eq!(t["eval"]["shuffle_seeds"].as_array().unwrap().len(), 2);
        assert!(apply_overrides(text, &["reader".to_string()]).is_err());
        assert!(apply_overrides(text, &["output_dir.x=1".to_string()]).is_err());
        assert_eq!(apply_overrides(text, &[]).unwrap(), text);
    }
}
