//! Run orchestration: every CLI stage as a library call that reads and
//! writes a run's output directory and records a manifest.
//!
//! Output layout (under `output_dir`):
//!
//! ```text
//! dataset.jsonl  dataset_summary.json        ingest
//! contexts/  bundles.jsonl                   generate-contexts
//! index/kb/  index/mixed/                    index
//! predictions.<grounding>.jsonl              answer
//! latency.<grounding>.jsonl                  answer (timing sidecar)
//! report.<grounding>.{json,txt,csv}          evaluate
//! recall.{json,csv}  rerank_trials.jsonl     rerank-recall
//! shuffle.{json,csv,txt}  predictions.shuffle-<seed>.jsonl
//! ragas.json  judge_audit.jsonl              ragas
//! sweep.{json,csv}  predictions.sweep-k<k>.jsonl
//! support/  support.jsonl  clusters.json  cluster_contexts/  cluster_bundles.jsonl
//! stats.json  length_histogram.csv           stats
//! manifest.<command>.json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterError, ClusterPlan, SupportSet};
use crate::config::{ConfigError, RunConfig, Slot};
use crate::contexts::{
    bundle_length_stats, export_jsonl, ContextBundle, ContextCache, ContextError, ContextFactory, GenerationConfig,
    LengthStats, ScrubRules,
};
use crate::corpus::{load_benchmark, summarize, to_canonical_jsonl, BenchmarkRecord, CorpusError, DatasetSummary};
use crate::eval::metrics::{accuracy, recall_curve, PassageTag, RecallPoint, RerankTrial, ScoredPassage};
use crate::eval::ragas::{JudgeAudit, JudgePrompts, RagasBlock, RagasRunner, RagasSample};
use crate::eval::report::{histogram_csv, recall_csv, shuffle_csv, shuffle_table, sweep_csv, EvalReport};
use crate::eval::sweeps::{context_count_sweep, shuffle_sweep, ShuffleBlock, SweepPoint};
use crate::eval::EvalError;
use crate::gateway::{Client, Gateway, GatewayError, SamplingParams};
use crate::manifest::Manifest;
use crate::prompt::{default_shot_pair, ContextView, Grounding, PromptError, Renderer, ShotExample, ShotSet, TemplateSet};
use crate::reader::{
    predictions_to_jsonl, read_predictions, GroundingKind, PredictionRecord, ReadJob, Reader, ReaderConfig,
    ReaderError,
};
use crate::retrieval::{
    chunk_documents, mixed_corpus, retrieve_with_rerank, ChunkSource, Document, Hit, MixedCounts, RetrievalError,
    VectorIndex,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Data(String),
}

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ENDPOINT: i32 = 2;
pub const EXIT_DATA: i32 = 3;

impl PipelineError {
    fn gateway(&self) -> Option<&GatewayError> {
        match self {
            PipelineError::Gateway(g)
            | PipelineError::Context(ContextError::Gateway(g))
            | PipelineError::Reader(ReaderError::Gateway { source: g, .. })
            | PipelineError::Eval(EvalError::Gateway(g))
            | PipelineError::Eval(EvalError::Reader(ReaderError::Gateway { source: g, .. }))
            | PipelineError::Retrieval(RetrievalError::Gateway(g))
            | PipelineError::Cluster(ClusterError::Gateway(g))
            | PipelineError::Cluster(ClusterError::Context(ContextError::Gateway(g)))
            | PipelineError::Cluster(ClusterError::Reader(ReaderError::Gateway { source: g, .. })) => Some(g),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if let Some(g) = self.gateway() {
            return match g {
                GatewayError::InvalidRequest(_) => EXIT_CONFIG,
                _ => EXIT_ENDPOINT,
            };
        }
        match self {
            PipelineError::Config(_) | PipelineError::Prompt(_) => EXIT_CONFIG,
            PipelineError::Context(ContextError::Prompt(_))
            | PipelineError::Reader(ReaderError::Prompt(_))
            | PipelineError::Eval(EvalError::Prompt(_)) => EXIT_CONFIG,
            _ => EXIT_DATA,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_ENDPOINT => "endpoint",
            _ => "data",
        }
    }

    /// Machine-readable form for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<PathBuf, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for i in items {
        s.push_str(&serde_json::to_string(i).expect("serializable"));
        s.push('\n');
    }
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Which passages ground the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundingMode {
    None,
    Generated,
    Retrieved,
    Mixed,
}

impl GroundingMode {
    pub fn name(self) -> &'static str {
        match self {
            GroundingMode::None => "none",
            GroundingMode::Generated => "generated",
            GroundingMode::Retrieved => "retrieved",
            GroundingMode::Mixed => "mixed",
        }
    }
}

impl FromStr for GroundingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(GroundingMode::None),
            "generated" => Ok(GroundingMode::Generated),
            "retrieved" => Ok(GroundingMode::Retrieved),
            "mixed" => Ok(GroundingMode::Mixed),
            _ => Err(format!("unknown grounding `{s}` (none, generated, retrieved, mixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Kb,
    Mixed,
}

impl IndexKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            IndexKind::Kb => "kb",
            IndexKind::Mixed => "mixed",
        }
    }
}

/// Files a stage read and wrote, plus its manifest.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub bundles: Vec<ContextBundle>,
    pub generation_calls: usize,
    pub cache_hits: usize,
    pub stage: StageOutput,
}

#[derive(Debug, Clone)]
pub struct IndexSummary {
    pub chunks: usize,
    pub counts: MixedCounts,
    pub stage: StageOutput,
}

#[derive(Debug, Clone)]
pub struct AnswerSummary {
    pub predictions: Vec<PredictionRecord>,
    pub log: PathBuf,
    pub stage: StageOutput,
}

/// Optional report blocks to merge into an evaluation.
#[derive(Debug, Clone, Default)]
pub struct ReportExtras {
    pub recall: Option<PathBuf>,
    pub ragas: Option<PathBuf>,
    pub shuffle: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub dataset: DatasetSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<LengthStats>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RagasSelection {
    /// Take at most this many correctly answered records, in log order.
    pub correct: Option<usize>,
    /// Take at most this many wrongly answered records, in log order.
    pub wrong: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct LatencyLine<'a> {
    record_id: &'a str,
    latency_ms: f64,
}

/// A loaded configuration with its assets and endpoint clients.
pub struct Run {
    pub config: RunConfig,
    pub renderer: Renderer,
    pub rules: ScrubRules,
    pub judge_prompts: JudgePrompts,
    pub gateway: Gateway,
    pub reader_shots: Vec<ShotExample>,
    pub focused_shots: Vec<ShotExample>,
    pub free_shots: Vec<ShotExample>,
}

impl Run {
    /// Loads assets and builds clients. Makes no network calls.
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let p = &config.prompt;
        let templates = match &p.templates_dir {
            Some(d) => TemplateSet::load_dir(&config.resolve(d))?,
            None => TemplateSet::embedded(),
        };
        templates.family(&p.family)?;
        let mut renderer = Renderer::new(templates);
        if let Some(sep) = &p.context_separator {
            renderer.context_separator = sep.clone();
        }
        let rules = match &p.scrub_rules {
            Some(f) => ScrubRules::load(&config.resolve(f)).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => ScrubRules::default(),
        };
        let judge_prompts = match &p.judge_dir {
            Some(d) => JudgePrompts::load_dir(&config.resolve(d))?,
            None => JudgePrompts::embedded(),
        };
        let reader_shots = match &p.shots_file {
            Some(f) => ShotSet::load(&config.resolve(f))?,
            None => {
                let pair = p
                    .shot_pair
                    .clone()
                    .unwrap_or_else(|| default_shot_pair(&p.family, &config.dataset.tag).to_string());
                ShotSet::builtin(&config.dataset.tag, &pair)?
            }
        }
        .shots;
        let focused_shots = ShotSet::builtin("generation", "option-focused")?.shots;
        let free_shots = ShotSet::builtin("generation", "option-free")?.shots;

        let mut gateway = Gateway::default();
        for (slot, profile) in config.endpoint_profiles() {
            let client = Some(Client::new(profile)?);
            match slot {
                Slot::Generation => gateway.generator = client,
                Slot::Reader => gateway.reader = client,
                Slot::Embedding => gateway.embedder = client,
                Slot::Rerank => gateway.reranker = client,
                Slot::Judge => gateway.judge = client,
            }
        }
        if gateway.reader.is_none() {
            gateway.reader = gateway.generator.clone();
        }
        Ok(Run {
            config,
            renderer,
            rules,
            judge_prompts,
            gateway,
            reader_shots,
            focused_shots,
            free_shots,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::new(RunConfig::load(path)?)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir().join(name)
    }

    fn dataset_path(&self) -> PathBuf {
        self.config.resolve(&self.config.dataset.path)
    }

    fn finish(&self, command: &str, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<StageOutput, PipelineError> {
        let out = self.config.out_dir();
        let manifest = Manifest::build(command, &self.config.hash(), &inputs, &outputs, &self.config.base_dir)
            .map_err(|e| io_err(&out, e))?;
        let path = manifest.write(&out).map_err(|e| io_err(&out, e))?;
        Ok(StageOutput {
            inputs,
            outputs,
            manifest: path,
        })
    }

    pub fn records(&self) -> Result<Vec<BenchmarkRecord>, PipelineError> {
        let records = load_benchmark(&self.dataset_path(), self.config.format()?, &self.config.dataset.tag)?;
        if records.is_empty() {
            return Err(PipelineError::Data(format!("dataset {} has no records", self.dataset_path().display())));
        }
        Ok(records)
    }

    pub fn train_records(&self) -> Result<Vec<BenchmarkRecord>, PipelineError> {
        let path = self
            .config
            .dataset
            .train_path
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("dataset.train_path is required for this command".into()))?;
        let tag = format!("{}-train", self.config.dataset.tag);
        Ok(load_benchmark(&self.config.resolve(path), self.config.format()?, &tag)?)
    }

    pub fn generation_config(&self) -> Result<GenerationConfig, PipelineError> {
        let g = &self.config.generation;
        let mut c = GenerationConfig::new(
            &self.gateway.generator()?.profile().model,
            self.focused_shots.clone(),
            self.free_shots.clone(),
        );
        c.l = g.l;
        c.m = g.m;
        c.params = SamplingParams {
            temperature: g.temperature,
            frequency_penalty: g.frequency_penalty,
            max_new_tokens: g.max_new_tokens,
            seed: Some(g.seed),
        };
        c.concurrency = g.concurrency;
        Ok(c)
    }

    fn reader_config(&self) -> ReaderConfig {
        let mut c = ReaderConfig::new(&self.config.prompt.family, self.reader_shots.clone());
        c.max_new_tokens = self.config.reader.max_new_tokens;
        c.concurrency = self.config.reader.concurrency;
        c
    }

    fn open_cache(&self, name: &str) -> Result<ContextCache, PipelineError> {
        Ok(ContextCache::open(&self.out(name))?)
    }

    pub fn ingest(&self) -> Result<(DatasetSummary, StageOutput), PipelineError> {
        let records = self.records()?;
        let summary = summarize(&records);
        let outputs = vec![
            write(&self.out("dataset.jsonl"), to_canonical_jsonl(&records))?,
            write(&self.out("dataset_summary.json"), json_pretty(&summary))?,
        ];
        let stage = self.finish("ingest", vec![self.dataset_path()], outputs)?;
        Ok((summary, stage))
    }

    async fn generate_into(
        &self,
        records: &[BenchmarkRecord],
        cache: &ContextCache,
        config: &GenerationConfig,
    ) -> Result<(Vec<ContextBundle>, usize, usize), PipelineError> {
        let factory = ContextFactory {
            renderer: &self.renderer,
            rules: &self.rules,
            cache,
            client: self.gateway.generator()?,
            config,
        };
        let outcomes = factory.generate_all(records).await;
        cache.compact()?;
        let outcomes = outcomes?;
        let calls = outcomes.iter().map(|o| o.calls).sum();
        let hits = outcomes.iter().filter(|o| o.cache_hit).count();
        Ok((outcomes.into_iter().map(|o| o.bundle).collect(), calls, hits))
    }

    /// Generates (or reuses from cache) the context bundle of every record.
    pub async fn generate_contexts(&self) -> Result<GenerateSummary, PipelineError> {
        let records = self.records()?;
        let cache = self.open_cache("contexts")?;
        let config = self.generation_config()?;
        let (bundles, calls, hits) = self.generate_into(&records, &cache, &config).await?;
        let outputs = vec![self.out("contexts"), write(&self.out("bundles.jsonl"), export_jsonl(&bundles))?];
        let stage = self.finish("generate-contexts", vec![self.dataset_path()], outputs)?;
        Ok(GenerateSummary {
            bundles,
            generation_calls: calls,
            cache_hits: hits,
            stage,
        })
    }

    /// Bundles for `records` from the cache; fails if any is missing.
    pub fn cached_bundles(&self, records: &[BenchmarkRecord]) -> Result<Vec<ContextBundle>, PipelineError> {
        let cache = self.open_cache("contexts")?;
        let config = self.generation_config_offline();
        let factory = ContextFactory {
            renderer: &self.renderer,
            rules: &self.rules,
            cache: &cache,
            client: self.gateway.generator()?,
            config: &config,
        };
        records
            .iter()
            .map(|r| {
                factory.cached_bundle(r)?.ok_or_else(|| {
                    PipelineError::Data(format!("no cached contexts for record `{}`; run generate-contexts first", r.id))
                })
            })
            .collect()
    }

    fn generation_config_offline(&self) -> GenerationConfig {
        self.generation_config().unwrap_or_else(|_| {
            GenerationConfig::new("", self.focused_shots.clone(), self.free_shots.clone())
        })
    }

    fn kb_documents(&self) -> Result<(PathBuf, Vec<Document>), PipelineError> {
        let path = self
            .config
            .retrieval
            .kb_path
            .as_ref()
            .map(|p| self.config.resolve(p))
            .ok_or_else(|| ConfigError::Invalid("retrieval.kb_path is required for this command".into()))?;
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: Document = serde_json::from_str(line)
                .map_err(|e| PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
            docs.push(d);
        }
        if docs.is_empty() {
            return Err(PipelineError::Data(format!("knowledge base {} is empty", path.display())));
        }
        Ok((path, docs))
    }

    /// Chunks and embeds the knowledge base, optionally mixed with generated contexts.
    pub async fn build_index(&self, kind: IndexKind) -> Result<IndexSummary, PipelineError> {
        let splitter = self.config.splitter()?;
        let (kb_path, docs) = self.kb_documents()?;
        let kb = chunk_documents(&docs, ChunkSource::Kb, &splitter, 0)?;
        let mut inputs = vec![kb_path];
        let (chunks, counts) = match kind {
            IndexKind::Kb => {
                let n = kb.len();
                (
                    kb,
                    MixedCounts {
                        kb_chunks: n,
                        generated_chunks: 0,
                    },
                )
            }
            IndexKind::Mixed => {
                let records = self.records()?;
                let test = self.cached_bundles(&records)?;
                let train = match self.config.retrieval.mixed_scope {
                    crate::retrieval::CorpusScope::KbPlusTrainAndTest => {
                        let train = self.train_records()?;
                        let cache = self.open_cache("contexts")?;
                        let config = self.generation_config()?;
                        self.generate_into(&train, &cache, &config).await?.0
                    }
                    _ => Vec::new(),
                };
                inputs.push(self.dataset_path());
                inputs.push(self.out("contexts"));
                mixed_corpus(&kb, &test, &train, self.config.retrieval.mixed_scope, &splitter)?
            }
        };
        let n = chunks.len();
        let index = VectorIndex::build(chunks, self.gateway.embedder()?, self.config.retrieval.embed_batch).await?;
        let dir = self.out("index").join(kind.dir_name());
        index.save(&dir)?;
        let stage = self.finish(&format!("index-{}", kind.dir_name()), inputs, vec![dir])?;
        Ok(IndexSummary {
            chunks: n,
            counts,
            stage,
        })
    }

    pub fn load_index(&self, kind: IndexKind) -> Result<VectorIndex, PipelineError> {
        let dir = self.out("index").join(kind.dir_name());
        if !dir.exists() {
            return Err(PipelineError::Data(format!(
                "no {} index at {}; run `index` first",
                kind.dir_name(),
                dir.display()
            )));
        }
        Ok(VectorIndex::load(&dir)?)
    }

    /// Top passages for a question: cosine search, reranked when a reranker is configured.
    pub async fn retrieve(&self, index: &VectorIndex, query: &str) -> Result<Vec<Hit>, PipelineError> {
        let r = &self.config.retrieval;
        let embedder = self.gateway.embedder()?;
        Ok(match &self.gateway.reranker {
            Some(rr) => retrieve_with_rerank(index, embedder, rr, query, r.k_retrieve, r.k_keep).await?,
            None => index.search(embedder, query, r.k_keep).await?,
        })
    }

    async fn retrieval_jobs(
        &self,
        records: &[BenchmarkRecord],
        kind: IndexKind,
        k: usize,
    ) -> Result<Vec<ReadJob>, PipelineError> {
        let index = self.load_index(kind)?;
        let jobs = stream::iter(records.iter().map(|r| {
            let index = &index;
            async move {
                let hits = self.retrieve(index, &r.question).await?;
                let grounding: Vec<Grounding> = hits
                    .into_iter()
                    .map(|h| Grounding {
                        text: h.chunk.text,
                        view: ContextView::Retrieved,
                    })
                    .collect();
                let k_eff = k.min(grounding.len());
                let label = match kind {
                    IndexKind::Kb => GroundingKind::Retrieved(k_eff),
                    IndexKind::Mixed => GroundingKind::Mixed(k_eff),
                };
                Ok::<_, PipelineError>(ReadJob {
                    record: r.clone(),
                    grounding,
                    kind: label.with_k(k_eff),
                    k: k_eff,
                })
            }
        }))
        .buffered(self.config.reader.concurrency.max(1))
        .try_collect()
        .await?;
        Ok(jobs)
    }

    /// Reader jobs for `records` under `mode` with `k` passages.
    pub async fn jobs(&self, records: &[BenchmarkRecord], mode: GroundingMode, k: usize) -> Result<Vec<ReadJob>, PipelineError> {
        match mode {
            GroundingMode::None => Ok(records
                .iter()
                .map(|r| ReadJob {
                    record: r.clone(),
                    grounding: Vec::new(),
                    kind: GroundingKind::None,
                    k: 0,
                })
                .collect()),
            GroundingMode::Generated => {
                let bundles = self.cached_bundles(records)?;
                Ok(crate::eval::sweeps::generated_jobs(records, &bundles, k)?)
            }
            GroundingMode::Retrieved => self.retrieval_jobs(records, IndexKind::Kb, k).await,
            GroundingMode::Mixed => self.retrieval_jobs(records, IndexKind::Mixed, k).await,
        }
    }

    /// Writes the prediction log and its latency sidecar. Only the log is
    /// returned for the manifest, since latencies differ from run to run.
    fn write_predictions(&self, name: &str, preds: &[PredictionRecord]) -> Result<Vec<PathBuf>, PipelineError> {
        let lat: Vec<LatencyLine> = preds
            .iter()
            .map(|p| LatencyLine {
                record_id: &p.record_id,
                latency_ms: p.latency.as_secs_f64() * 1e3,
            })
            .collect();
        write(&self.out(&format!("latency.{name}.jsonl")), jsonl(&lat))?;
        Ok(vec![write(&self.out(&format!("predictions.{name}.jsonl")), predictions_to_jsonl(preds))?])
    }

    pub async fn answer(&self, mode: GroundingMode, k: Option<usize>) -> Result<AnswerSummary, PipelineError> {
        let k = match mode {
            GroundingMode::None => 0,
            _ => k.unwrap_or(self.config.reader.k),
        };
        let records = self.records()?;
        let jobs = self.jobs(&records, mode, k).await?;
        let rc = self.reader_config();
        let reader = Reader {
            renderer: &self.renderer,
            client: self.gateway.reader()?,
            config: &rc,
        };
        let predictions = reader.answer_all(&jobs).await?;
        let outputs = self.write_predictions(mode.name(), &predictions)?;
        let mut inputs = vec![self.dataset_path()];
        match mode {
            GroundingMode::None => {}
            GroundingMode::Generated => inputs.push(self.out("contexts")),
            GroundingMode::Retrieved => inputs.push(self.out("index/kb")),
            GroundingMode::Mixed => inputs.push(self.out("index/mixed")),
        }
        let log = outputs[0].clone();
        let stage = self.finish(&format!("answer-{}", mode.name()), inputs, outputs)?;
        Ok(AnswerSummary {
            predictions,
            log,
            stage,
        })
    }

    /// Report over a prediction log, with any extra blocks merged in.
    pub fn evaluate(&self, predictions: &Path, extras: &ReportExtras) -> Result<(EvalReport, StageOutput), PipelineError> {
        let preds = read_predictions(predictions)?;
        let mut report = EvalReport::new(self.config.snapshot(), accuracy(&preds)?);
        let mut inputs = vec![predictions.to_path_buf()];
        if let Some(p) = &extras.recall {
            report.recall_at_k = Some(read_json::<Vec<RecallPoint>>(p)?);
            inputs.push(p.clone());
        }
        if let Some(p) = &extras.ragas {
            report.ragas = Some(read_json::<RagasBlock>(p)?);
            inputs.push(p.clone());
        }
        if let Some(p) = &extras.shuffle {
            report.shuffle = Some(read_json::<ShuffleBlock>(p)?);
            inputs.push(p.clone());
        }
        if let Some(p) = &extras.sweep {
            report.context_sweep = Some(read_json::<Vec<SweepPoint>>(p)?);
            inputs.push(p.clone());
        }
        report.validate()?;
        let stem = predictions
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.trim_end_matches(".jsonl").replacen("predictions", "report", 1))
            .unwrap_or_else(|| "report".into());
        let outputs = vec![
            write(&self.out(&format!("{stem}.json")), report.to_json())?,
            write(&self.out(&format!("{stem}.txt")), report.render_text())?,
            write(&self.out(&format!("{stem}.csv")), report.accuracy_csv())?,
        ];
        let command = match stem.strip_prefix("report.") {
            Some(tag) => format!("evaluate-{tag}"),
            None => "evaluate".to_string(),
        };
        let stage = self.finish(&command, inputs, outputs)?;
        Ok((report, stage))
    }

    /// Reranks each question's generated bundle against ten retrieved chunks.
    pub async fn rerank_recall(&self) -> Result<(Vec<RecallPoint>, StageOutput), PipelineError> {
        let records = self.records()?;
        let bundles = self.cached_bundles(&records)?;
        let index = self.load_index(IndexKind::Kb)?;
        let embedder = self.gateway.embedder()?;
        let reranker = self.gateway.reranker()?;
        let trials: Vec<RerankTrial> = stream::iter(records.iter().zip(&bundles).map(|(r, b)| {
            let index = &index;
            async move {
                let hits = index
                    .search(embedder, &r.question, crate::eval::metrics::TRIAL_RETRIEVED)
                    .await?;
                let mut passages: Vec<(PassageTag, String)> = b
                    .contexts
                    .iter()
                    .map(|c| {
                        let tag = match c.view {
                            ContextView::OptionFocused => PassageTag::OptionFocused,
                            _ => PassageTag::OptionFree,
                        };
                        (tag, c.text.clone())
                    })
                    .collect();
                passages.extend(hits.into_iter().map(|h| (PassageTag::Retrieved, h.chunk.text)));
                let texts: Vec<String> = passages.iter().map(|(_, t)| t.clone()).collect();
                let scores = reranker.rerank_score(&r.question, &texts).await?;
                let trial = RerankTrial {
                    record_id: r.id.clone(),
                    passages: passages
                        .into_iter()
                        .zip(scores)
                        .map(|((tag, text), score)| ScoredPassage {
                            tag,
                            score: score as f64,
                            text,
                        })
                        .collect(),
                };
                trial.validate()?;
                Ok::<_, PipelineError>(trial)
            }
        }))
        .buffered(self.config.reader.concurrency.max(1))
        .try_collect()
        .await?;
        let curve = recall_curve(&trials, &self.config.eval.recall_ks)?;
        let outputs = vec![
            write(&self.out("rerank_trials.jsonl"), jsonl(&trials))?,
            write(&self.out("recall.json"), json_pretty(&curve))?,
            write(&self.out("recall.csv"), recall_csv(&curve))?,
        ];
        let stage = self.finish(
            "rerank-recall",
            vec![self.dataset_path(), self.out("contexts"), self.out("index/kb")],
            outputs,
        )?;
        Ok((curve, stage))
    }

    /// Base ordering plus every configured seed, grounded on generated contexts.
    pub async fn shuffle_eval(&self) -> Result<(ShuffleBlock, StageOutput), PipelineError> {
        let records = self.records()?;
        let k = self.config.reader.k;
        let bundles = if k > 0 { self.cached_bundles(&records)? } else { Vec::new() };
        let rc = self.reader_config();
        let reader = Reader {
            renderer: &self.renderer,
            client: self.gateway.reader()?,
            config: &rc,
        };
        let outcome = shuffle_sweep(&reader, &records, &bundles, k, &self.config.eval.shuffle_seeds).await?;
        let mut outputs = Vec::new();
        for (seed, preds) in &outcome.predictions {
            let name = match seed {
                Some(s) => format!("shuffle-{s}"),
                None => "shuffle-none".to_string(),
            };
            outputs.extend(self.write_predictions(&name, preds)?);
        }
        outputs.push(write(&self.out("shuffle.json"), json_pretty(&outcome.block))?);
        outputs.push(write(&self.out("shuffle.csv"), shuffle_csv(&outcome.block))?);
        outputs.push(write(&self.out("shuffle.txt"), shuffle_table(&outcome.block))?);
        let mut inputs = vec![self.dataset_path()];
        if k > 0 {
            inputs.push(self.out("contexts"));
        }
        let stage = self.finish("shuffle-eval", inputs, outputs)?;
        Ok((outcome.block, stage))
    }

    /// Accuracy for each configured number of generated contexts.
    pub async fn context_sweep(&self) -> Result<(Vec<SweepPoint>, StageOutput), PipelineError> {
        let records = self.records()?;
        let bundles = self.cached_bundles(&records)?;
        let rc = self.reader_config();
        let reader = Reader {
            renderer: &self.renderer,
            client: self.gateway.reader()?,
            config: &rc,
        };
        let outcome = context_count_sweep(&reader, &records, &bundles, &self.config.eval.sweep_ks).await?;
        let mut outputs = Vec::new();
        for (k, preds) in &outcome.predictions {
            outputs.extend(self.write_predictions(&format!("sweep-k{k}"), preds)?);
        }
        outputs.push(write(&self.out("sweep.json"), json_pretty(&outcome.points))?);
        outputs.push(write(&self.out("sweep.csv"), sweep_csv(&outcome.points))?);
        let stage = self.finish("context-sweep", vec![self.dataset_path(), self.out("contexts")], outputs)?;
        Ok((outcome.points, stage))
    }

    /// Passages a prediction was grounded on, recomputed from the run's artifacts.
    async fn passages_for(&self, records: &[BenchmarkRecord], preds: &[PredictionRecord]) -> Result<Vec<Vec<String>>, PipelineError> {
        let mut out = Vec::with_capacity(preds.len());
        let by_id: BTreeMap<&str, &BenchmarkRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        for p in preds {
            let r = by_id
                .get(p.record_id.as_str())
                .ok_or_else(|| PipelineError::Data(format!("prediction for unknown record `{}`", p.record_id)))?;
            let (mode, k) = match p.grounding {
                GroundingKind::None => (GroundingMode::None, 0),
                GroundingKind::Generated(k) => (GroundingMode::Generated, k),
                GroundingKind::Retrieved(k) => (GroundingMode::Retrieved, k),
                GroundingKind::Mixed(k) => (GroundingMode::Mixed, k),
            };
            let job = self.jobs(std::slice::from_ref(*r), mode, k).await?.remove(0);
            out.push(job.grounding.into_iter().take(k).map(|g| g.text).collect());
        }
        Ok(out)
    }

    /// Judge-scored context recall, precision and faithfulness for a prediction log.
    pub async fn ragas(&self, predictions: &Path, select: RagasSelection) -> Result<(RagasBlock, StageOutput), PipelineError> {
        let records = self.records()?;
        let preds = read_predictions(predictions)?;
        let (mut nc, mut nw) = (0usize, 0usize);
        let chosen: Vec<PredictionRecord> = preds
            .into_iter()
            .filter(|p| {
                let (count, cap) = if p.is_correct() { (&mut nc, select.correct) } else { (&mut nw, select.wrong) };
                *count += 1;
                cap.is_none_or(|c| *count <= c)
            })
            .collect();
        let passages = self.passages_for(&records, &chosen).await?;
        let by_id: BTreeMap<&str, &BenchmarkRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let samples: Vec<RagasSample> = chosen
            .iter()
            .zip(passages)
            .map(|(p, contexts)| RagasSample {
                record: (*by_id[p.record_id.as_str()]).clone(),
                contexts,
                answer: p.raw.clone(),
            })
            .collect();
        let runner = RagasRunner {
            judge: self.gateway.judge()?,
            prompts: &self.judge_prompts,
            concurrency: self.config.eval.judge_concurrency,
        };
        let (block, audit): (RagasBlock, Vec<JudgeAudit>) = runner.run(&samples).await?;
        let outputs = vec![
            write(&self.out("ragas.json"), json_pretty(&block))?,
            write(&self.out("judge_audit.jsonl"), jsonl(&audit))?,
        ];
        let stage = self.finish("ragas", vec![self.dataset_path(), predictions.to_path_buf()], outputs)?;
        Ok((block, stage))
    }

    /// Support set, clustering, and one cluster-guided context per cluster for each test question.
    pub async fn cluster_prompt(&self) -> Result<(SupportSet, ClusterPlan, Vec<ContextBundle>, StageOutput), PipelineError> {
        let train = self.train_records()?;
        let records = self.records()?;
        let base = self.generation_config()?;
        let support_cfg = GenerationConfig {
            l: 0,
            m: 1,
            ..base.clone()
        };
        let support_cache = self.open_cache("support")?;
        let rc = {
            let mut c = self.reader_config();
            c.shots = self.reader_shots.clone();
            c
        };
        let reader = Reader {
            renderer: &self.renderer,
            client: self.gateway.reader()?,
            config: &rc,
        };
        let factory = ContextFactory {
            renderer: &self.renderer,
            rules: &self.rules,
            cache: &support_cache,
            client: self.gateway.generator()?,
            config: &support_cfg,
        };
        let support = cluster::build_support_set(&factory, &reader, self.gateway.embedder()?, &train).await;
        support_cache.compact()?;
        let support = support?;
        let c = &self.config.cluster;
        let k = c.k.min(support.kept);
        let plan = cluster::plan(&support, k.max(1), c.n, c.seed)?;
        let cluster_cache = self.open_cache("cluster_contexts")?;
        let bundles = cluster::cluster_contexts(
            &self.renderer,
            &self.rules,
            &cluster_cache,
            self.gateway.generator()?,
            &base,
            &plan,
            &records,
        )
        .await;
        cluster_cache.compact()?;
        let bundles = bundles?;
        let outputs = vec![
            self.out("support"),
            self.out("cluster_contexts"),
            write(&self.out("support.jsonl"), jsonl(&support.pairs))?,
            write(&self.out("clusters.json"), json_pretty(&plan))?,
            write(&self.out("cluster_bundles.jsonl"), export_jsonl(&bundles))?,
        ];
        let train_path = self.config.resolve(self.config.dataset.train_path.as_ref().expect("checked above"));
        let stage = self.finish("cluster-prompt", vec![self.dataset_path(), train_path], outputs)?;
        Ok((support, plan, bundles, stage))
    }

    /// Dataset summary and, when contexts exist, their length distribution.
    pub fn stats(&self) -> Result<(StatsReport, StageOutput), PipelineError> {
        let records = self.records()?;
        let mut inputs = vec![self.dataset_path()];
        let contexts = if self.out("contexts").join("contexts.jsonl").exists() {
            inputs.push(self.out("contexts"));
            let bundles = self.cached_bundles(&records)?;
            Some(bundle_length_stats(&bundles, self.config.eval.length_bin_width))
        } else {
            None
        };
        let report = StatsReport {
            dataset: summarize(&records),
            contexts,
        };
        let mut outputs = vec![write(&self.out("stats.json"), json_pretty(&report))?];
        if let Some(c) = &report.contexts {
            outputs.push(write(&self.out("length_histogram.csv"), histogram_csv(&c.histogram, c.bin_width))?);
        }
        let stage = self.finish("stats", inputs, outputs)?;
        Ok((report, stage))
    }
}
