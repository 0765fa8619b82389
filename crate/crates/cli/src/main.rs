//! `ctxgenie` command line. Each subcommand runs one pipeline stage, prints a
//! JSON summary on stdout and leaves its artifacts plus a manifest in the
//! output directory. Failures print a JSON error as the last stderr line and
//! exit with 1 (config), 2 (endpoint) or 3 (data).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use ctxgenie::config::RunConfig;
use ctxgenie::mock::{Fixture, MockError, MockServer};
use ctxgenie::pipeline::{
    GroundingMode, IndexKind, PipelineError, RagasSelection, ReportExtras, Run, StageOutput, EXIT_CONFIG,
    EXIT_ENDPOINT,
};
use serde_json::{json, Value};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ctxgenie", version, about = "Generate-then-read evaluation harness for multiple-choice QA")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "ctxgenie.toml")]
    config: PathBuf,
    /// Override a config key, e.g. `--set reader.k=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output on stderr (-v info, -vv debug). RUST_LOG wins when set.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grounding {
    None,
    Generated,
    Retrieved,
    Mixed,
}

impl From<Grounding> for GroundingMode {
    fn from(g: Grounding) -> Self {
        match g {
            Grounding::None => GroundingMode::None,
            Grounding::Generated => GroundingMode::Generated,
            Grounding::Retrieved => GroundingMode::Retrieved,
            Grounding::Mixed => GroundingMode::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Knowledge-base chunks only.
    Kb,
    /// Knowledge base plus generated contexts.
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the benchmark.
    Ingest,
    /// Generate (or reuse cached) context bundles for every question.
    GenerateContexts,
    /// Chunk, embed and index passages for retrieval.
    Index {
        #[arg(long, value_enum, default_value = "kb")]
        kind: Kind,
    },
    /// Answer every question with the reader.
    Answer {
        #[arg(long, value_enum, default_value = "generated")]
        grounding: Grounding,
        /// Passages per prompt; defaults to `reader.k`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a prediction log and write the report.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        recall: Option<PathBuf>,
        #[arg(long)]
        ragas: Option<PathBuf>,
        #[arg(long)]
        shuffle: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Reranker preference for generated over retrieved passages.
    RerankRecall,
    /// Answer under each shuffle seed and test the letter distribution.
    ShuffleEval,
    /// Judge-scored context recall, context precision and faithfulness.
    Ragas {
        #[arg(long)]
        predictions: PathBuf,
        /// At most this many correctly answered questions.
        #[arg(long)]
        correct: Option<usize>,
        /// At most this many wrongly answered questions.
        #[arg(long)]
        wrong: Option<usize>,
    },
    /// Accuracy as a function of the number of contexts.
    ContextSweep,
    /// Cluster-guided context generation from a training split.
    ClusterPrompt,
    /// Dataset and context length statistics.
    Stats,
    /// Serve the deterministic mock endpoints until interrupted.
    MockServe {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// An error with its exit code and JSON form.
struct Failure {
    code: i32,
    json: Value,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code(),
            json: e.to_json(),
        }
    }
}

impl From<MockError> for Failure {
    fn from(e: MockError) -> Self {
        let (code, kind) = match e {
            MockError::Fixture { .. } => (EXIT_CONFIG, "config"),
            MockError::Bind { .. } => (EXIT_ENDPOINT, "endpoint"),
        };
        Failure {
            code,
            json: json!({"error": kind, "exit_code": code, "message": e.to_string()}),
        }
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        json: json!({"error": "config", "exit_code": EXIT_CONFIG, "message": message}),
    }
}

fn stage_json(stage: &StageOutput) -> Value {
    json!({
        "outputs": stage.outputs,
        "manifest": stage.manifest,
    })
}

fn load_run(cli: &Cli) -> Result<Run, Failure> {
    let config = RunConfig::load_with_overrides(&cli.config, &cli.overrides).map_err(PipelineError::from)?;
    Ok(Run::new(config)?)
}

async fn execute(cli: &Cli) -> Result<Value, Failure> {
    if let Command::MockServe { fixture, port, host } = &cli.command {
        let f = Fixture::load(fixture)?;
        let server = MockServer::start(&f, host, *port).await?;
        println!("{}", json!({"url": server.url()}));
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = server.wait() => {}
        }
        return Ok(Value::Null);
    }
    let run = load_run(cli)?;
    let out = match &cli.command {
        Command::Ingest => {
            let (summary, stage) = run.ingest()?;
            json!({"summary": summary, "stage": stage_json(&stage)})
        }
        Command::GenerateContexts => {
            let g = run.generate_contexts().await?;
            json!({
                "bundles": g.bundles.len(),
                "generation_calls": g.generation_calls,
                "cache_hits": g.cache_hits,
                "stage": stage_json(&g.stage),
            })
        }
        Command::Index { kind } => {
            let kind = match kind {
                Kind::Kb => IndexKind::Kb,
                Kind::Mixed => IndexKind::Mixed,
            };
            let s = run.build_index(kind).await?;
            json!({"chunks": s.chunks, "counts": s.counts, "stage": stage_json(&s.stage)})
        }
        Command::Answer { grounding, k } => {
            let a = run.answer((*grounding).into(), *k).await?;
            let correct = a.predictions.iter().filter(|p| p.is_correct()).count();
            json!({
                "predictions": a.predictions.len(),
                "correct": correct,
                "log": a.log,
                "stage": stage_json(&a.stage),
            })
        }
        Command::Evaluate {
            predictions,
            recall,
            ragas,
            shuffle,
            sweep,
        } => {
            let extras = ReportExtras {
                recall: recall.clone(),
                ragas: ragas.clone(),
                shuffle: shuffle.clone(),
                sweep: sweep.clone(),
            };
            let (report, stage) = run.evaluate(predictions, &extras)?;
            json!({
                "n": report.n,
                "accuracy": report.accuracy,
                "parse_failure_rate": report.parse_failure_rate,
                "stage": stage_json(&stage),
            })
        }
        Command::RerankRecall => {
            let (curve, stage) = run.rerank_recall().await?;
            json!({"recall": curve, "stage": stage_json(&stage)})
        }
        Command::ShuffleEval => {
            let (block, stage) = run.shuffle_eval().await?;
            let rows: Vec<Value> = block
                .rows
                .iter()
                .map(|r| json!({"seed": r.seed, "accuracy": r.accuracy, "p": r.p_display}))
                .collect();
            json!({"rows": rows, "stage": stage_json(&stage)})
        }
        Command::Ragas {
            predictions,
            correct,
            wrong,
        } => {
            let select = RagasSelection {
                correct: *correct,
                wrong: *wrong,
            };
            let (block, stage) = run.ragas(predictions, select).await?;
            json!({
                "n": block.n,
                "context_recall": block.context_recall,
                "context_precision": block.context_precision,
                "faithfulness": block.faithfulness,
                "judge_failures": block.judge_failures,
                "stage": stage_json(&stage),
            })
        }
        Command::ContextSweep => {
            let (points, stage) = run.context_sweep().await?;
            json!({"points": points, "stage": stage_json(&stage)})
        }
        Command::ClusterPrompt => {
            let (support, plan, bundles, stage) = run.cluster_prompt().await?;
            json!({
                "support_pairs": support.pairs.len(),
                "kept": support.kept,
                "clusters": plan.kmeans.centroids.len(),
                "bundles": bundles.len(),
                "stage": stage_json(&stage),
            })
        }
        Command::Stats => {
            let (report, stage) = run.stats()?;
            json!({"stats": report, "stage": stage_json(&stage)})
        }
        Command::MockServe { .. } => unreachable!("handled above"),
    };
    Ok(out)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", f.json);
    ExitCode::from(f.code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return fail(config_failure(e.kind().to_string()));
        }
    };
    init_logging(cli.verbose);
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(config_failure(format!("cannot start runtime: {e}"))),
    };
    match rt.block_on(execute(&cli)) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}
