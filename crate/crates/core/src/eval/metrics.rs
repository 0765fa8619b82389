//! Pure metric functions over predictions, rerank trials and judge verdicts.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::reader::PredictionRecord;

pub const NO_SUBJECT: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAccuracy {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n: usize,
    pub correct: usize,
    pub unparsed: usize,
    pub accuracy: f64,
    pub parse_failure_rate: f64,
    pub per_subject: BTreeMap<String, SubjectAccuracy>,
}

/// Accuracy with unparseable answers counted wrong.
pub fn accuracy(preds: &[PredictionRecord]) -> Result<AccuracySummary, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty("prediction log"));
    }
    let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut correct, mut unparsed) = (0, 0);
    for p in preds {
        let ok = p.is_correct() as usize;
        correct += ok;
        unparsed += p.extracted_letter.is_none() as usize;
        let e = per.entry(p.subject.clone().unwrap_or_else(|| NO_SUBJECT.into())).or_default();
        e.0 += 1;
        e.1 += ok;
    }
    let n = preds.len();
    Ok(AccuracySummary {
        n,
        correct,
        unparsed,
        accuracy: correct as f64 / n as f64,
        parse_failure_rate: unparsed as f64 / n as f64,
        per_subject: per
            .into_iter()
            .map(|(s, (n, c))| {
                (
                    s,
                    SubjectAccuracy {
                        n,
                        correct: c,
                        accuracy: c as f64 / n as f64,
                    },
                )
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassageTag {
    OptionFocused,
    OptionFree,
    Retrieved,
}

impl PassageTag {
    pub fn is_generated(self) -> bool {
        self != PassageTag::Retrieved
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub tag: PassageTag,
    pub score: f64,
    #[serde(default)]
    pub text: String,
}

pub const TRIAL_GENERATED: usize = 5;
pub const TRIAL_RETRIEVED: usize = 10;

/// One question's reranked pool of generated and retrieved passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTrial {
    pub record_id: String,
    pub passages: Vec<ScoredPassage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecallSubset {
    AllGenerated,
    OptionFreeOnly,
}

impl RecallSubset {
    pub fn contains(self, tag: PassageTag) -> bool {
        match self {
            RecallSubset::AllGenerated => tag.is_generated(),
            RecallSubset::OptionFreeOnly => tag == PassageTag::OptionFree,
        }
    }
}

impl RerankTrial {
    pub fn validate(&self) -> Result<(), EvalError> {
        let generated = self.passages.iter().filter(|p| p.tag.is_generated()).count();
        let retrieved = self.passages.len() - generated;
        if generated != TRIAL_GENERATED || retrieved != TRIAL_RETRIEVED {
            return Err(EvalError::Invalid(format!(
                "trial `{}` has {generated} generated and {retrieved} retrieved passages, expected {TRIAL_GENERATED} and {TRIAL_RETRIEVED}",
                self.record_id
            )));
        }
        if self.passages.iter().any(|p| p.score.is_nan()) {
            return Err(EvalError::Invalid(format!("trial `{}` has a NaN score", self.record_id)));
        }
        Ok(())
    }

    /// Passage indices by descending score, ties in input order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.passages.len()).collect();
        idx.sort_by(|&a, &b| self.passages[b].score.total_cmp(&self.passages[a].score));
        idx
    }

    pub fn hits(&self, k: usize, subset: RecallSubset) -> usize {
        self.ranking()
            .into_iter()
            .take(k)
            .filter(|&i| subset.contains(self.passages[i].tag))
            .count()
    }
}

/// Total subset hits in the top K over all trials, and the slot count K·|trials|.
pub fn recall_counts(trials: &[RerankTrial], k: usize, subset: RecallSubset) -> Result<(u64, u64), EvalError> {
    let pool = TRIAL_GENERATED + TRIAL_RETRIEVED;
    if k == 0 || k > pool {
        return Err(EvalError::Invalid(format!("K must be in 1..={pool}, got {k}")));
    }
    if trials.is_empty() {
        return Err(EvalError::Empty("rerank trials"));
    }
    let mut hits = 0u64;
    for t in trials {
        t.validate()?;
        hits += t.hits(k, subset) as u64;
    }
    Ok((hits, (k * trials.len()) as u64))
}

/// Mean share of the top K slots held by `subset`, as a percentage.
pub fn recall_at_k(trials: &[RerankTrial], k: usize, subset: RecallSubset) -> Result<f64, EvalError> {
    let (hits, slots) = recall_counts(trials, k, subset)?;
    Ok(100.0 * hits as f64 / slots as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub k: usize,
    pub all_generated: f64,
    pub option_free: f64,
}

pub fn recall_curve(trials: &[RerankTrial], ks: &[usize]) -> Result<Vec<RecallPoint>, EvalError> {
    ks.iter()
        .map(|&k| {
            Ok(RecallPoint {
                k,
                all_generated: recall_at_k(trials, k, RecallSubset::AllGenerated)?,
                option_free: recall_at_k(trials, k, RecallSubset::OptionFreeOnly)?,
            })
        })
        .collect()
}

/// CP@K as an exact fraction; zero when nothing is relevant.
pub fn context_precision_exact(v: &[bool]) -> BigRational {
    let relevant = v.iter().filter(|&&x| x).count();
    if relevant == 0 {
        return BigRational::zero();
    }
    let mut sum = BigRational::zero();
    let mut seen = 0usize;
    for (i, &rel) in v.iter().enumerate() {
        if rel {
            seen += 1;
            sum += BigRational::new(BigInt::from(seen), BigInt::from(i + 1));
        }
    }
    sum / BigRational::from_integer(BigInt::from(relevant))
}

pub fn context_precision(v: &[bool]) -> f64 {
    context_precision_exact(v).to_f64().unwrap_or(0.0)
}

/// Share of ground-truth sentences attributed to the context.
pub fn context_recall(verdicts: &[u8]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty("sentence verdicts"));
    }
    Ok(verdicts.iter().filter(|&&v| v == 1).count() as f64 / verdicts.len() as f64)
}

/// Share of answer claims implied by the context; `None` with no claims.
pub fn faithfulness(verdicts: &[u8]) -> Option<f64> {
    if verdicts.is_empty() {
        return None;
    }
    Some(verdicts.iter().filter(|&&v| v == 1).count() as f64 / verdicts.len() as f64)
}

/// Mean of the defined values, `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.into_iter().flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reader::GroundingKind;

    fn pred(subject: &str, letter: Option<char>, correct: bool) -> PredictionRecord {
        PredictionRecord {
            record_id: "r".into(),
            subject: Some(subject.into()),
            raw: String::new(),
            extracted_letter: letter,
            correct: letter.map(|_| correct),
            grounding: GroundingKind::None,
            prompt_fingerprint: String::new(),
            k_reduced: false,
            latency: Default::default(),
        }
    }

    #[test]
    fn seven_of_ten() {
        let mut ps: Vec<_> = (0..7).map(|_| pred("a", Some('A'), true)).collect();
        ps.push(pred("b", Some('B'), false));
        ps.push(pred("b", None, false));
        ps.push(pred("a", Some('C'), false));
        let s = accuracy(&ps).unwrap();
        assert_eq!(s.accuracy, 0.7);
        assert_eq!(s.unparsed, 1);
        assert_eq!(s.per_subject["a"].correct, 7);
        assert_eq!(s.per_subject["a"].n, 8);
        assert_eq!(s.per_subject["b"].accuracy, 0.0);
        assert!(accuracy(&[]).is_err());
    }

    fn trial(scores_gen: [f64; 5], scores_ret: [f64; 10]) -> RerankTrial {
        let tags = [
            PassageTag::OptionFocused,
            PassageTag::OptionFocused,
            PassageTag::OptionFocused,
            PassageTag::OptionFree,
            PassageTag::OptionFree,
        ];
        let mut passages: Vec<ScoredPassage> = tags
            .iter()
            .zip(scores_gen)
            .map(|(&tag, score)| ScoredPassage { tag, score, text: String::new() })
            .collect();
        passages.extend(scores_ret.iter().map(|&score| ScoredPassage {
            tag: PassageTag::Retrieved,
            score,
            text: String::new(),
        }));
        RerankTrial { record_id: "t".into(), passages }
    }

    #[test]
    fn generated_first_closed_form() {
        let t = trial([10.0, 9.0, 8.0, 7.0, 6.0], [1.0; 10]);
        let ts = vec![t];
        for k in 1..=5 {
            assert_eq!(recall_at_k(&ts, k, RecallSubset::AllGenerated).unwrap(), 100.0);
        }
        assert_eq!(recall_at_k(&ts, 8, RecallSubset::AllGenerated).unwrap(), 62.5);
        assert_eq!(recall_at_k(&ts, 1, RecallSubset::OptionFreeOnly).unwrap(), 0.0);
        assert!(recall_at_k(&ts, 0, RecallSubset::AllGenerated).is_err());
        assert!(recall_at_k(&ts, 16, RecallSubset::AllGenerated).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        let t = trial([1.0; 5], [1.0; 10]);
        assert_eq!(t.ranking(), (0..15).collect::<Vec<_>>());
        let mut bad = t.clone();
        bad.passages.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn precision_cases() {
        assert_eq!(context_precision(&[true, true, true]), 1.0);
        assert_eq!(
            context_precision_exact(&[true, false, true]),
            BigRational::new(BigInt::from(5), BigInt::from(6))
        );
        assert_eq!(context_precision(&[false, false]), 0.0);
        assert_eq!(context_precision(&[]), 0.0);
    }

    #[test]
    fn recall_and_faithfulness() {
        assert_eq!(context_recall(&[1, 1]).unwrap(), 1.0);
        assert_eq!(context_recall(&[0, 0]).unwrap(), 0.0);
        assert!(context_recall(&[]).is_err());
        assert_eq!(faithfulness(&[0, 0, 0]), Some(0.0));
        assert_eq!(faithfulness(&[]), None);
        assert_eq!(mean_defined([Some(1.0), None, Some(0.0)]), Some(0.5));
    }
}
