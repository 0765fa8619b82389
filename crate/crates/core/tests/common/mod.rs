//! Shared setup for integration tests: a run directory with a synthetic
//! benchmark, knowledge base and config, served by the mock server.
#![allow(dead_code)]

pub mod samples;

use std::path::{Path, PathBuf};

use ctxgenie::corpus::{to_canonical_jsonl, BenchmarkRecord};
use ctxgenie::mock::{Fixture, MockServer};
use ctxgenie::pipeline::Run;
use ctxgenie::synth::{documents_to_jsonl, synthetic_benchmark, synthetic_kb};
use serde_json::{json, Value};

pub struct TestRun {
    pub dir: tempfile::TempDir,
    pub server: MockServer,
    pub records: Vec<BenchmarkRecord>,
    pub train: Vec<BenchmarkRecord>,
    pub config_path: PathBuf,
}

impl TestRun {
    pub fn run(&self) -> Run {
        Run::load(&self.config_path).expect("config loads")
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.dir.path().join("out").join(rel)
    }
}

/// Gold answers for every question the mock reader may see.
pub fn answer_key(records: &[BenchmarkRecord]) -> Value {
    let map: serde_json::Map<String, Value> = records
        .iter()
        .map(|r| (r.question.clone(), Value::String(r.gold_text().to_string())))
        .collect();
    Value::Object(map)
}

/// Oracle reader, tagged synthetic contexts, generated-over-retrieved reranker, all-yes judge.
pub fn default_fixture(records: &[BenchmarkRecord], train: &[BenchmarkRecord]) -> Value {
    let all: Vec<BenchmarkRecord> = records.iter().chain(train).cloned().collect();
    json!({
        "generation": {"default": {"policy": "synthetic-context"}},
        "reader": {"default": {"policy": "gold-oracle", "answer_key": answer_key(&all)}},
        "embedding": {"dim": 64},
        "rerank": {"policy": "pattern-preference", "patterns": ["\\[focused\\]", "\\[free\\]"]},
        "judge": {"policy": "all-yes"}
    })
}

pub fn config_toml(url: &str, extra: &str) -> String {
    format!(
        r#"output_dir = "out"

[dataset]
path = "bench.jsonl"
tag = "medqa"
train_path = "train.jsonl"

[prompt]
family = "zephyr"

[endpoints.generation]
base_url = "{url}"
model = "mock-generator"
max_parallel = 8
backoff_base_ms = 5

[endpoints.reader]
base_url = "{url}/reader"
model = "mock-reader"
max_parallel = 8
backoff_base_ms = 5

[endpoints.embedding]
base_url = "{url}"
model = "mock-embedder"
backoff_base_ms = 5

[endpoints.rerank]
base_url = "{url}"
model = "mock-reranker"
backoff_base_ms = 5

[endpoints.judge]
base_url = "{url}/judge"
model = "mock-judge"
backoff_base_ms = 5
{extra}"#
    )
}

pub const SMALL_RETRIEVAL: &str = r#"
[retrieval]
kb_path = "kb.jsonl"
chunk_size = 300
chunk_overlap = 60
"#;

pub fn write_inputs(dir: &Path, records: &[BenchmarkRecord], train: &[BenchmarkRecord]) {
    std::fs::write(dir.join("bench.jsonl"), to_canonical_jsonl(records)).unwrap();
    std::fs::write(dir.join("train.jsonl"), to_canonical_jsonl(train)).unwrap();
    std::fs::write(dir.join("kb.jsonl"), documents_to_jsonl(&synthetic_kb(12, 400, 5))).unwrap();
}

pub async fn start_mock(fixture: Value, base: &Path) -> MockServer {
    let mut f: Fixture = serde_json::from_value(fixture).expect("fixture parses");
    f.resolve_paths(base);
    MockServer::start(&f, "127.0.0.1", 0).await.expect("mock starts")
}

/// A run with `n` test and `n_train` training questions. `tweak` may edit the fixture.
pub async fn setup(n: usize, n_train: usize, extra_toml: &str, tweak: impl FnOnce(&mut Value)) -> TestRun {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_benchmark(n, 11);
    let train: Vec<BenchmarkRecord> = synthetic_benchmark(n + n_train, 12)
        .into_iter()
        .skip(n)
        .map(|mut r| {
            r.id = format!("train-{}", r.id);
            r.question = format!("Training {}", r.question);
            r
        })
        .collect();
    write_inputs(dir.path(), &records, &train);
    let mut fixture = default_fixture(&records, &train);
    tweak(&mut fixture);
    let server = start_mock(fixture, dir.path()).await;
    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, config_toml(&server.url(), extra_toml)).unwrap();
    TestRun {
        dir,
        server,
        records,
        train,
        config_path,
    }
}
