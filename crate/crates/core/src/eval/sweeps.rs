//! Option-shuffle bias sweep and the number-of-contexts ablation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::stats::{chi_square_bias, ChiSquare};
use super::EvalError;
use crate::contexts::ContextBundle;
use crate::corpus::{letter, letter_index, shuffle_options, BenchmarkRecord};
use crate::reader::{GroundingKind, PredictionRecord, ReadJob, Reader};

pub const DEFAULT_SHUFFLE_SEEDS: [u64; 10] = [4, 11, 13, 40, 41, 42, 43, 45, 47, 50];

/// Predicted and gold letter frequencies for one seed (`None` = unshuffled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleRow {
    pub seed: Option<u64>,
    pub predicted: Vec<u64>,
    pub unparsed: u64,
    pub gold: Vec<u64>,
    pub accuracy: f64,
    pub chi_square: Option<ChiSquare>,
    pub p_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleBlock {
    pub letters: usize,
    pub rows: Vec<ShuffleRow>,
}

pub fn letters_for(records: &[BenchmarkRecord]) -> usize {
    records.iter().map(|r| r.options.len()).max().unwrap_or(0)
}

/// Tabulates one seed's predictions against the records they answered.
pub fn shuffle_row(
    seed: Option<u64>,
    records: &[BenchmarkRecord],
    preds: &[PredictionRecord],
    letters: usize,
) -> Result<ShuffleRow, EvalError> {
    let mut predicted = vec![0u64; letters];
    let mut gold = vec![0u64; letters];
    let mut unparsed = 0;
    for r in records {
        gold[r.gold_index] += 1;
    }
    for p in preds {
        match p.extracted_letter.and_then(letter_index) {
            Some(i) if i < letters => predicted[i] += 1,
            _ => unparsed += 1,
        }
    }
    let chi = chi_square_bias(&predicted, &gold).ok();
    Ok(ShuffleRow {
        seed,
        p_display: chi.as_ref().map(ChiSquare::p_display).unwrap_or_else(|| "n/a".into()),
        chi_square: chi,
        predicted,
        unparsed,
        gold,
        accuracy: accuracy(preds)?.accuracy,
    })
}

fn bundle_index(bundles: &[ContextBundle]) -> HashMap<&str, &ContextBundle> {
    bundles.iter().map(|b| (b.record_id.as_str(), b)).collect()
}

/// Reader jobs over generated bundles; `k = 0` reads without grounding.
pub fn generated_jobs(
    records: &[BenchmarkRecord],
    bundles: &[ContextBundle],
    k: usize,
) -> Result<Vec<ReadJob>, EvalError> {
    let index = bundle_index(bundles);
    records
        .iter()
        .map(|r| {
            let grounding = if k == 0 {
                Vec::new()
            } else {
                index
                    .get(r.id.as_str())
                    .ok_or_else(|| EvalError::Invalid(format!("no context bundle for record `{}`", r.id)))?
                    .grounding()
            };
            Ok(ReadJob {
                record: r.clone(),
                grounding,
                kind: GroundingKind::Generated(k).with_k(k),
                k,
            })
        })
        .collect()
}

pub struct ShuffleOutcome {
    pub block: ShuffleBlock,
    pub predictions: Vec<(Option<u64>, Vec<PredictionRecord>)>,
}

/// Unshuffled base plus one reader pass per seed. Contexts generated for the
/// base ordering are reused for every permutation.
pub async fn shuffle_sweep(
    reader: &Reader<'_>,
    records: &[BenchmarkRecord],
    bundles: &[ContextBundle],
    k: usize,
    seeds: &[u64],
) -> Result<ShuffleOutcome, EvalError> {
    let letters = letters_for(records);
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    for seed in std::iter::once(None).chain(seeds.iter().copied().map(Some)) {
        let variant: Vec<BenchmarkRecord> = match seed {
            None => records.to_vec(),
            Some(s) => records.iter().map(|r| shuffle_options(r, s)).collect::<Result<_, _>>()?,
        };
        let jobs = generated_jobs(&variant, bundles, k)?;
        let preds = reader.answer_all(&jobs).await?;
        rows.push(shuffle_row(seed, &variant, &preds, letters)?);
        predictions.push((seed, preds));
    }
    Ok(ShuffleOutcome {
        block: ShuffleBlock { letters, rows },
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub predictions: Vec<(usize, Vec<PredictionRecord>)>,
}

/// Accuracy at each passage count, passages taken in bundle order.
pub async fn context_count_sweep(
    reader: &Reader<'_>,
    records: &[BenchmarkRecord],
    bundles: &[ContextBundle],
    ks: &[usize],
) -> Result<SweepOutcome, EvalError> {
    let mut points = Vec::new();
    let mut predictions = Vec::new();
    for &k in ks {
        let preds = reader.answer_all(&generated_jobs(records, bundles, k)?).await?;
        let acc = accuracy(&preds)?;
        points.push(SweepPoint {
            k,
            n: acc.n,
            correct: acc.correct,
            accuracy: acc.accuracy,
        });
        predictions.push((k, preds));
    }
    Ok(SweepOutcome { points, predictions })
}

pub fn letter_header(letters: usize) -> Vec<String> {
    (0..letters).map(|i| letter(i).to_string()).collect()
}
