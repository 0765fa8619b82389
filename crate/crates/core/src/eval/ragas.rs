//! Judge-scored context recall, context precision and faithfulness.

use std::collections::BTreeMap;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{context_precision, context_recall, faithfulness, mean_defined};
use super::EvalError;
use crate::contexts::sentences;
use crate::corpus::BenchmarkRecord;
use crate::gateway::{first_balanced_object, Client, GenerationRequest, JudgeOutcome, SamplingParams};
use crate::prompt::{PromptError, PromptTemplate};

const FAMILY: &str = "judge";

/// The four frozen judge prompt templates.
#[derive(Debug, Clone)]
pub struct JudgePrompts {
    pub context_recall: PromptTemplate,
    pub context_precision: PromptTemplate,
    pub claim_decomposition: PromptTemplate,
    pub faithfulness: PromptTemplate,
}

impl JudgePrompts {
    pub fn embedded() -> Self {
        let t = |name: &str, body: &str| {
            PromptTemplate::parse(name, FAMILY, body.strip_suffix('\n').unwrap_or(body)).expect("embedded judge template")
        };
        JudgePrompts {
            context_recall: t("context_recall", include_str!("../../assets/judge/context_recall.tmpl")),
            context_precision: t("context_precision", include_str!("../../assets/judge/context_precision.tmpl")),
            claim_decomposition: t(
                "claim_decomposition",
                include_str!("../../assets/judge/claim_decomposition.tmpl"),
            ),
            faithfulness: t("faithfulness", include_str!("../../assets/judge/faithfulness.tmpl")),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let t = |name: &str| -> Result<PromptTemplate, PromptError> {
            let path = dir.join(format!("{name}.tmpl"));
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Asset {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            PromptTemplate::parse(name, FAMILY, body.strip_suffix('\n').unwrap_or(&body))
        };
        Ok(JudgePrompts {
            context_recall: t("context_recall")?,
            context_precision: t("context_precision")?,
            claim_decomposition: t("claim_decomposition")?,
            faithfulness: t("faithfulness")?,
        })
    }

    pub fn content_hash(&self) -> String {
        crate::hashing::fingerprint(&[
            &self.context_recall.body,
            &self.context_precision.body,
            &self.claim_decomposition.body,
            &self.faithfulness.body,
        ])
    }
}

/// Judge prompts are line-oriented, so values are kept to one line.
fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render(t: &PromptTemplate, outer: &[(&'static str, String)], items: &[String]) -> Result<String, PromptError> {
    let mut map: BTreeMap<&str, String> = outer.iter().map(|(k, v)| (*k, one_line(v))).collect();
    map.insert("item_count", items.len().to_string());
    let shots: Vec<BTreeMap<&str, String>> = items
        .iter()
        .enumerate()
        .map(|(i, it)| BTreeMap::from([("item_number", (i + 1).to_string()), ("item", one_line(it))]))
        .collect();
    t.render(&map, &shots)
}

/// One record to score: its passages and the reader's answer.
#[derive(Debug, Clone)]
pub struct RagasSample {
    pub record: BenchmarkRecord,
    pub contexts: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RagasMetric {
    ContextRecall,
    ContextPrecision,
    ClaimDecomposition,
    Faithfulness,
}

/// A judge prompt and everything it replied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeAudit {
    pub record_id: String,
    pub metric: RagasMetric,
    pub prompt: String,
    pub outcome: JudgeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub record_id: String,
    pub context_recall: Option<f64>,
    pub context_precision: Option<f64>,
    pub faithfulness: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeFailures {
    pub context_recall: usize,
    pub context_precision: usize,
    pub faithfulness: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagasBlock {
    pub n: usize,
    pub context_recall: Option<f64>,
    pub context_precision: Option<f64>,
    pub faithfulness: Option<f64>,
    pub judge_failures: JudgeFailures,
    /// Records whose answer decomposed into zero claims.
    pub faithfulness_undefined: usize,
    pub per_record: Vec<RecordScores>,
}

/// Ground-truth sentences of the gold option.
pub fn ground_truth_sentences(record: &BenchmarkRecord) -> Vec<String> {
    let gold = record.gold_text();
    let out: Vec<String> = sentences(gold).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
    if out.is_empty() {
        vec![gold.to_string()]
    } else {
        out
    }
}

/// Claims from a `{"claims": [...]}` reply.
pub fn parse_claims(text: &str) -> Option<Vec<String>> {
    let obj = first_balanced_object(text)?;
    let v: Value = serde_json::from_str(obj).ok()?;
    v.get("claims")?
        .as_array()?
        .iter()
        .map(|c| c.as_str().map(|s| s.trim().to_string()))
        .filter(|c| c.as_ref().is_none_or(|s| !s.is_empty()))
        .collect()
}

struct Scored {
    scores: RecordScores,
    failures: JudgeFailures,
    undefined: bool,
    audit: Vec<JudgeAudit>,
}

pub struct RagasRunner<'a> {
    pub judge: &'a Client,
    pub prompts: &'a JudgePrompts,
    pub concurrency: usize,
}

impl RagasRunner<'_> {
    async fn ask(&self, prompt: String, n: usize) -> Result<(JudgeOutcome, String), EvalError> {
        let out = self.judge.judge(&prompt, Some(n)).await?;
        Ok((out, prompt))
    }

    async fn score(&self, s: &RagasSample) -> Result<Scored, EvalError> {
        let id = s.record.id.clone();
        let joined = s.contexts.join(" ");
        let mut audit = Vec::new();
        let mut failures = JudgeFailures::default();
        let audit_of = |metric, prompt, outcome| JudgeAudit {
            record_id: id.clone(),
            metric,
            prompt,
            outcome,
        };

        let gt = ground_truth_sentences(&s.record);
        let p = render(
            &self.prompts.context_recall,
            &[("question", s.record.question.clone()), ("context", joined.clone())],
            &gt,
        )?;
        let (out, p) = self.ask(p, gt.len()).await?;
        let cr = match out.verdicts() {
            Some(v) => Some(context_recall(v)?),
            None => {
                failures.context_recall += 1;
                None
            }
        };
        audit.push(audit_of(RagasMetric::ContextRecall, p, out));

        let cp = if s.contexts.is_empty() {
            Some(0.0)
        } else {
            let p = render(
                &self.prompts.context_precision,
                &[("question", s.record.question.clone()), ("answer", s.record.gold_text().to_string())],
                &s.contexts,
            )?;
            let (out, p) = self.ask(p, s.contexts.len()).await?;
            let cp = match out.verdicts() {
                Some(v) => Some(context_precision(&v.iter().map(|&x| x == 1).collect::<Vec<_>>())),
                None => {
                    failures.context_precision += 1;
                    None
                }
            };
            audit.push(audit_of(RagasMetric::ContextPrecision, p, out));
            cp
        };

        let p = render(
            &self.prompts.claim_decomposition,
            &[("question", s.record.question.clone()), ("answer", s.answer.clone())],
            &[],
        )?;
        let params = SamplingParams::greedy(512);
        let reply = self.judge.complete(&GenerationRequest::new(p.clone(), &params, 1)).await?;
        let raw = reply.texts.into_iter().next().unwrap_or_default();
        let claims = parse_claims(&raw);
        audit.push(audit_of(
            RagasMetric::ClaimDecomposition,
            p,
            match &claims {
                Some(_) => JudgeOutcome::Verdicts { verdicts: vec![], raw: vec![raw] },
                None => JudgeOutcome::Failure { raw: vec![raw] },
            },
        ));
        let mut undefined = false;
        let f = match claims {
            None => {
                failures.faithfulness += 1;
                None
            }
            Some(c) if c.is_empty() => {
                undefined = true;
                None
            }
            Some(c) => {
                let p = render(&self.prompts.faithfulness, &[("context", joined)], &c)?;
                let (out, p) = self.ask(p, c.len()).await?;
                let f = match out.verdicts() {
                    Some(v) => faithfulness(v),
                    None => {
                        failures.faithfulness += 1;
                        None
                    }
                };
                audit.push(audit_of(RagasMetric::Faithfulness, p, out));
                f
            }
        };

        Ok(Scored {
            scores: RecordScores {
                record_id: id.clone(),
                context_recall: cr,
                context_precision: cp,
                faithfulness: f,
            },
            failures,
            undefined,
            audit,
        })
    }

    /// Scores every sample and averages per metric over records where it is defined.
    pub async fn run(&self, samples: &[RagasSample]) -> Result<(RagasBlock, Vec<JudgeAudit>), EvalError> {
        if samples.is_empty() {
            return Err(EvalError::Empty("RAGAS sample"));
        }
        let scored: Vec<Scored> = stream::iter(samples.iter().map(|s| self.score(s)))
            .buffered(self.concurrency.max(1))
            .try_collect()
            .await?;
        let mut failures = JudgeFailures::default();
        let mut undefined = 0;
        let mut audit = Vec::new();
        let mut per_record = Vec::new();
        for s in scored {
            failures.context_recall += s.failures.context_recall;
            failures.context_precision += s.failures.context_precision;
            failures.faithfulness += s.failures.faithfulness;
            undefined += s.undefined as usize;
            audit.extend(s.audit);
            per_record.push(s.scores);
        }
        Ok((
            RagasBlock {
                n: samples.len(),
                context_recall: mean_defined(per_record.iter().map(|r| r.context_recall)),
                context_precision: mean_defined(per_record.iter().map(|r| r.context_precision)),
                faithfulness: mean_defined(per_record.iter().map(|r| r.faithfulness)),
                judge_failures: failures,
                faithfulness_undefined: undefined,
                per_record,
            },
            audit,
        ))
    }
}
