mod common;

use common::{config_toml, setup, start_mock, SMALL_RETRIEVAL};
use ctxgenie::manifest::Manifest;
use ctxgenie::pipeline::{GroundingMode, IndexKind, PipelineError, RagasSelection, ReportExtras, Run, EXIT_DATA};
use ctxgenie::prompt::ContextView;
use ctxgenie::reader::{predictions_to_jsonl, read_predictions, GroundingKind, Reader, ReaderConfig};
use serde_json::json;

#[tokio::test]
async fn oracle_reader_is_always_right_on_generated_contexts() {
    let t = setup(12, 0, "", |_| {}).await;
    let run = t.run();
    let gen = run.generate_contexts().await.unwrap();
    assert_eq!(gen.bundles.len(), 12);
    assert_eq!(gen.cache_hits, 0);
    for b in &gen.bundles {
        assert!(b.check());
        let tags: Vec<bool> = b.contexts.iter().map(|c| c.text.starts_with("[focused]")).collect();
        assert_eq!(tags, [true, true, true, false, false]);
    }
    let ans = run.answer(GroundingMode::Generated, None).await.unwrap();
    assert!(ans.predictions.iter().all(|p| p.correct == Some(true)));
    assert!(ans.predictions.iter().all(|p| p.grounding == GroundingKind::Generated(5)));
    let (report, stage) = run.evaluate(&ans.log, &ReportExtras::default()).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.n, 12);
    assert!(t.out("report.generated.json").exists());
    assert!(t.out("report.generated.txt").exists());

    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&stage.manifest).unwrap()).unwrap();
    assert_eq!(m.config_hash, run.config.hash());
    let listed: Vec<&str> = m.outputs.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(listed, ["out/report.generated.csv", "out/report.generated.json", "out/report.generated.txt"]);
    assert!(m.verify_outputs(t.dir.path()).is_empty());
}

#[tokio::test]
async fn regenerating_contexts_hits_the_cache() {
    let t = setup(6, 0, "", |_| {}).await;
    let run = t.run();
    let first = run.generate_contexts().await.unwrap();
    assert_eq!(first.generation_calls, 12);
    let before = t.server.calls().generation;
    let again = t.run().generate_contexts().await.unwrap();
    assert_eq!(t.server.calls().generation, before);
    assert_eq!(again.generation_calls, 0);
    assert_eq!(again.cache_hits, 6);
    assert_eq!(again.bundles, first.bundles);
}

#[tokio::test]
async fn answering_without_contexts_needs_no_generation() {
    let t = setup(5, 0, "", |_| {}).await;
    let run = t.run();
    let ans = run.answer(GroundingMode::None, Some(5)).await.unwrap();
    assert!(ans.predictions.iter().all(|p| p.grounding == GroundingKind::None && p.is_correct()));
    assert_eq!(t.server.calls().generation, 0);
    match run.answer(GroundingMode::Generated, None).await {
        Err(e) => assert_eq!(e.exit_code(), EXIT_DATA),
        Ok(_) => panic!("answering from an empty cache must fail"),
    }
}

#[tokio::test]
async fn each_context_count_gives_a_distinct_prompt() {
    let t = setup(3, 0, "", |_| {}).await;
    let run = t.run();
    let bundles = run.generate_contexts().await.unwrap().bundles;
    let rc = ReaderConfig::new("zephyr", run.reader_shots.clone());
    let reader = Reader {
        renderer: &run.renderer,
        client: run.gateway.reader().unwrap(),
        config: &rc,
    };
    let jobs = ctxgenie::eval::sweeps::generated_jobs(&t.records, &bundles, 5).unwrap();
    let mut fps: Vec<String> = (1..=5)
        .map(|k| ctxgenie::hashing::sha256_hex(reader.prompt(&jobs[0], k).unwrap().as_bytes()))
        .collect();
    fps.sort();
    fps.dedup();
    assert_eq!(fps.len(), 5);
}

#[tokio::test]
async fn retrieved_and_mixed_grounding() {
    let t = setup(6, 0, SMALL_RETRIEVAL, |_| {}).await;
    let run = t.run();
    run.generate_contexts().await.unwrap();
    let kb = run.build_index(IndexKind::Kb).await.unwrap();
    assert!(kb.chunks > 12);
    assert_eq!(kb.counts.generated_chunks, 0);
    let mixed = run.build_index(IndexKind::Mixed).await.unwrap();
    assert_eq!(mixed.counts.kb_chunks, kb.chunks);
    assert_eq!(mixed.counts.generated_chunks, 30);

    let r = run.answer(GroundingMode::Retrieved, None).await.unwrap();
    assert!(r.predictions.iter().all(|p| p.grounding == GroundingKind::Retrieved(5)));
    assert!(t.out("predictions.retrieved.jsonl").exists());
    let m = run.answer(GroundingMode::Mixed, Some(3)).await.unwrap();
    assert!(m.predictions.iter().all(|p| p.grounding == GroundingKind::Mixed(3)));
    assert!(m.predictions.iter().all(|p| p.is_correct()));
}

#[tokio::test]
async fn generated_passages_outrank_retrieved_ones() {
    let t = setup(8, 0, SMALL_RETRIEVAL, |_| {}).await;
    let run = t.run();
    run.generate_contexts().await.unwrap();
    run.build_index(IndexKind::Kb).await.unwrap();
    let (curve, _) = run.rerank_recall().await.unwrap();
    assert_eq!(curve.len(), 15);
    for p in &curve {
        let expect = if p.k <= 5 { 100.0 } else { 500.0 / p.k as f64 };
        assert_eq!(p.all_generated, expect, "K={}", p.k);
        assert!(p.option_free <= 200.0 / p.k as f64, "K={}", p.k);
    }
    assert_eq!(curve[7].all_generated, 62.5);
    assert_eq!(curve[0].option_free, 0.0);
}

#[tokio::test]
async fn shuffled_options_do_not_fool_the_oracle() {
    let t = setup(15, 0, "", |_| {}).await;
    let run = t.run();
    run.generate_contexts().await.unwrap();
    let (block, _) = run.shuffle_eval().await.unwrap();
    assert_eq!(block.rows.len(), 11);
    assert_eq!(block.rows[0].seed, None);
    for row in &block.rows {
        assert_eq!(row.accuracy, 1.0);
        assert_eq!(row.predicted.iter().sum::<u64>() + row.unparsed, 15);
        assert_eq!(row.predicted, row.gold);
        let chi = row.chi_square.as_ref().unwrap();
        assert_eq!(chi.statistic, 0.0);
        assert_eq!(chi.p_value, 1.0);
    }
    assert!(t.out("predictions.shuffle-42.jsonl").exists());
    let golds: Vec<&Vec<u64>> = block.rows.iter().map(|r| &r.gold).collect();
    assert!(golds.iter().any(|g| *g != golds[0]), "shuffling should move gold letters");
}

#[tokio::test]
async fn revealing_context_lifts_accuracy_from_four_contexts() {
    let t = setup(6, 0, "", |f| {
        f["generation"] = json!({"default": {"policy": "synthetic-context", "free_suffix": "REVEAL"}});
        let key = f["reader"]["default"]["answer_key"].clone();
        f["reader"] = json!({"default": {"policy": "gold-if-revealed", "marker": "REVEAL", "answer_key": key}});
    })
    .await;
    let run = t.run();
    run.generate_contexts().await.unwrap();
    let (points, _) = run.context_sweep().await.unwrap();
    let acc: Vec<(usize, f64)> = points.iter().map(|p| (p.k, p.accuracy)).collect();
    assert_eq!(acc, [(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.0), (4, 1.0), (5, 1.0)]);
    let none = run.answer(GroundingMode::None, None).await.unwrap();
    let swept = read_predictions(&t.out("predictions.sweep-k0.jsonl")).unwrap();
    assert_eq!(predictions_to_jsonl(&swept), predictions_to_jsonl(&none.predictions));
}

#[tokio::test]
async fn ragas_scores_follow_the_judge() {
    let t = setup(4, 0, "", |_| {}).await;
    let run = t.run();
    run.generate_contexts().await.unwrap();
    let log = run.answer(GroundingMode::Generated, None).await.unwrap().log;
    let (block, _) = run.ragas(&log, RagasSelection::default()).await.unwrap();
    assert_eq!(block.n, 4);
    assert_eq!(block.context_recall, Some(1.0));
    assert_eq!(block.context_precision, Some(1.0));
    assert_eq!(block.faithfulness, Some(1.0));
    let audit = std::fs::read_to_string(t.out("judge_audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 16);

    let limited = run
        .ragas(
            &log,
            RagasSelection {
                correct: Some(2),
                wrong: Some(0),
            },
        )
        .await
        .unwrap()
        .0;
    assert_eq!(limited.n, 2);

    let (report, _) = run
        .evaluate(
            &log,
            &ReportExtras {
                ragas: Some(t.out("ragas.json")),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(report.ragas.unwrap().faithfulness, Some(1.0));
}

#[tokio::test]
async fn judge_failures_are_counted_not_scored() {
    let t = setup(3, 0, "", |f| f["judge"] = json!({"policy": "garbage"})).await;
    let run = t.run();
    let log = run.answer(GroundingMode::None, None).await.unwrap().log;
    let (block, _) = run.ragas(&log, RagasSelection::default()).await.unwrap();
    assert_eq!(block.context_recall, None);
    assert_eq!(block.judge_failures.context_recall, 3);
    // No passages: precision is zero by definition and needs no judge call.
    assert_eq!(block.context_precision, Some(0.0));
    assert_eq!(block.judge_failures.faithfulness, 3);
}

#[tokio::test]
async fn cluster_prompting_builds_one_context_per_cluster() {
    let extra = "\n[cluster]\nk = 3\nn = 2\nseed = 5\n";
    let t = setup(4, 12, extra, |_| {}).await;
    let run = t.run();
    let (support, plan, bundles, _) = run.cluster_prompt().await.unwrap();
    assert_eq!(support.pairs.len(), 12);
    assert_eq!(support.kept, 12);
    for p in &support.pairs {
        let norm: f64 = p.embedding.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    assert_eq!(plan.shots.len(), 3);
    assert_eq!(plan.kmeans.assignments.len(), 12);
    assert_eq!(bundles.len(), 4);
    for b in &bundles {
        assert_eq!(b.contexts.len(), 3);
        assert!(b.contexts.iter().all(|c| c.view == ContextView::OptionFree));
    }
    let (_, plan2, bundles2, _) = t.run().cluster_prompt().await.unwrap();
    assert_eq!(plan2, plan);
    assert_eq!(bundles2, bundles);
}

#[tokio::test]
async fn stats_cover_dataset_and_contexts() {
    let t = setup(5, 0, "", |_| {}).await;
    let run = t.run();
    let (first, _) = run.stats().unwrap();
    assert!(first.contexts.is_none());
    run.generate_contexts().await.unwrap();
    let (s, _) = run.stats().unwrap();
    assert_eq!(s.dataset.record_count, 5);
    let c = s.contexts.unwrap();
    assert_eq!(c.contexts, 25);
    assert!(t.out("length_histogram.csv").exists());
}

#[tokio::test]
async fn empty_prediction_log_is_a_data_error() {
    let t = setup(2, 0, "", |_| {}).await;
    let run = t.run();
    std::fs::create_dir_all(t.out("")).unwrap();
    std::fs::write(t.out("predictions.empty.jsonl"), "").unwrap();
    let err = run.evaluate(&t.out("predictions.empty.jsonl"), &ReportExtras::default()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_DATA);
    assert_eq!(err.to_json()["error"], "data");
}

#[tokio::test]
async fn overflowing_prompts_drop_one_context() {
    let t = setup(3, 0, "", |_| {}).await;
    let run = t.run();
    let bundles = run.generate_contexts().await.unwrap().bundles;
    let rc = ReaderConfig::new("zephyr", run.reader_shots.clone());
    let reader = Reader {
        renderer: &run.renderer,
        client: run.gateway.reader().unwrap(),
        config: &rc,
    };
    let jobs = ctxgenie::eval::sweeps::generated_jobs(&t.records, &bundles, 5).unwrap();
    let len = |k| jobs.iter().map(|j| reader.prompt(j, k).unwrap().chars().count()).collect::<Vec<_>>();
    let (l4, l5) = (len(4), len(5));
    let window = *l4.iter().max().unwrap();
    assert!(*l5.iter().min().unwrap() > window);

    let mut fixture = common::default_fixture(&t.records, &[]);
    fixture["context_window_chars"] = json!(window);
    let narrow = start_mock(fixture, t.dir.path()).await;
    let text = config_toml(&t.server.url(), "").replace(
        &format!("base_url = \"{}/reader\"", t.server.url()),
        &format!("base_url = \"{}/reader\"", narrow.url()),
    );
    std::fs::write(&t.config_path, text).unwrap();
    let ans = Run::load(&t.config_path).unwrap().answer(GroundingMode::Generated, None).await.unwrap();
    for p in &ans.predictions {
        assert!(p.k_reduced);
        assert_eq!(p.grounding, GroundingKind::Generated(4));
        assert!(p.is_correct());
    }
    assert_eq!(narrow.calls().reader, 6);
}

#[tokio::test]
async fn missing_endpoint_is_reported() {
    let t = setup(2, 0, "", |_| {}).await;
    let mut cfg = t.run().config;
    cfg.endpoints.judge = None;
    let run = Run::new(cfg).unwrap();
    let log = run.answer(GroundingMode::None, None).await.unwrap().log;
    let err = run.ragas(&log, RagasSelection::default()).await.unwrap_err();
    assert!(matches!(err, PipelineError::Gateway(_)), "{err}");
}
