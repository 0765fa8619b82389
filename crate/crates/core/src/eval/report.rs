//! The aggregated evaluation report and its text and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{AccuracySummary, RecallPoint, SubjectAccuracy};
use super::ragas::RagasBlock;
use super::sweeps::{letter_header, ShuffleBlock, SweepPoint};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub unparsed: usize,
    pub parse_failure_rate: f64,
    pub per_subject: BTreeMap<String, SubjectAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<Vec<RecallPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ragas: Option<RagasBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<ShuffleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_sweep: Option<Vec<SweepPoint>>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "n/a".into())
}

impl EvalReport {
    pub fn new(config: serde_json::Value, acc: AccuracySummary) -> Self {
        EvalReport {
            config,
            n: acc.n,
            correct: acc.correct,
            accuracy: acc.accuracy,
            unparsed: acc.unparsed,
            parse_failure_rate: acc.parse_failure_rate,
            per_subject: acc.per_subject,
            recall_at_k: None,
            ragas: None,
            shuffle: None,
            context_sweep: None,
        }
    }

    /// Fractions in [0,1], percentages in [0,100], frequency rows summing to n.
    pub fn validate(&self) -> Result<(), EvalError> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(EvalError::Invalid(format!("{name} = {x} outside [0,1]")))
            }
        };
        unit("accuracy", self.accuracy)?;
        unit("parse_failure_rate", self.parse_failure_rate)?;
        for s in self.per_subject.values() {
            unit("subject accuracy", s.accuracy)?;
        }
        for p in self.recall_at_k.iter().flatten() {
            for v in [p.all_generated, p.option_free] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(EvalError::Invalid(format!("Recall@{} = {v} outside [0,100]", p.k)));
                }
            }
        }
        if let Some(r) = &self.ragas {
            for v in [r.context_recall, r.context_precision, r.faithfulness].into_iter().flatten() {
                unit("RAGAS score", v)?;
            }
        }
        if let Some(sh) = &self.shuffle {
            for row in &sh.rows {
                unit("shuffle accuracy", row.accuracy)?;
                let total: u64 = row.predicted.iter().sum::<u64>() + row.unparsed;
                let gold: u64 = row.gold.iter().sum();
                if total != gold {
                    return Err(EvalError::Invalid(format!(
                        "seed {:?}: {total} predictions against {gold} records",
                        row.seed
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "questions        {}", self.n);
        let _ = writeln!(out, "accuracy         {}%  ({} correct)", pct(self.accuracy), self.correct);
        let _ = writeln!(
            out,
            "parse failures   {}%  ({} unparsed)",
            pct(self.parse_failure_rate),
            self.unparsed
        );
        if self.per_subject.len() > 1 {
            let width = self.per_subject.keys().map(|k| k.chars().count()).max().unwrap_or(0).max(7);
            let _ = writeln!(out, "\n{:<width$}  {:>5}  {:>8}", "subject", "n", "accuracy");
            for (s, a) in &self.per_subject {
                let _ = writeln!(out, "{s:<width$}  {:>5}  {:>7}%", a.n, pct(a.accuracy));
            }
        }
        if let Some(curve) = &self.recall_at_k {
            let _ = writeln!(out, "\n{:>3}  {:>14}  {:>11}", "K", "all generated", "option-free");
            for p in curve {
                let _ = writeln!(out, "{:>3}  {:>13.2}%  {:>10.2}%", p.k, p.all_generated, p.option_free);
            }
        }
        if let Some(r) = &self.ragas {
            let _ = writeln!(out, "\nRAGAS over {} records", r.n);
            let _ = writeln!(
                out,
                "context recall     {}%  (judge failures {})",
                opt_pct(r.context_recall),
                r.judge_failures.context_recall
            );
            let _ = writeln!(
                out,
                "context precision  {}%  (judge failures {})",
                opt_pct(r.context_precision),
                r.judge_failures.context_precision
            );
            let _ = writeln!(
                out,
                "faithfulness       {}%  (judge failures {}, undefined {})",
                opt_pct(r.faithfulness),
                r.judge_failures.faithfulness,
                r.faithfulness_undefined
            );
        }
        if let Some(sh) = &self.shuffle {
            out.push('\n');
            out.push_str(&shuffle_table(sh));
        }
        if let Some(sw) = &self.context_sweep {
            let _ = writeln!(out, "\n{:>2}  {:>8}", "k", "accuracy");
            for p in sw {
                let _ = writeln!(out, "{:>2}  {:>7}%", p.k, pct(p.accuracy));
            }
        }
        out
    }

    /// Per-subject accuracy as CSV, overall row first.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("subject,n,correct,accuracy\n");
        let _ = writeln!(out, "all,{},{},{}", self.n, self.correct, self.accuracy);
        for (s, a) in &self.per_subject {
            let _ = writeln!(out, "{},{},{},{}", csv_field(s), a.n, a.correct, a.accuracy);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn seed_label(seed: Option<u64>) -> String {
    seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into())
}

/// Letter frequencies per seed with the goodness-of-fit result.
pub fn shuffle_table(sh: &ShuffleBlock) -> String {
    let letters = letter_header(sh.letters);
    let mut out = String::new();
    let _ = write!(out, "{:>5}", "seed");
    for l in &letters {
        let _ = write!(out, "  {:>5}", format!("{l}"));
    }
    let _ = write!(out, "  {:>5}", "?");
    for l in &letters {
        let _ = write!(out, "  {:>5}", format!("{l}*"));
    }
    let _ = writeln!(out, "  {:>8}  {:>8}  {:>9}", "acc", "chi2", "p");
    for row in &sh.rows {
        let _ = write!(out, "{:>5}", seed_label(row.seed));
        for c in &row.predicted {
            let _ = write!(out, "  {c:>5}");
        }
        let _ = write!(out, "  {:>5}", row.unparsed);
        for c in &row.gold {
            let _ = write!(out, "  {c:>5}");
        }
        let stat = row.chi_square.as_ref().map(|c| format!("{:.2}", c.statistic)).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "  {:>7}%  {stat:>8}  {:>9}", pct(row.accuracy), row.p_display);
    }
    let _ = writeln!(out, "(X = predicted, X* = gold, ? = unparsed)");
    out
}

pub fn shuffle_csv(sh: &ShuffleBlock) -> String {
    let letters = letter_header(sh.letters);
    let mut out = String::from("seed");
    for l in &letters {
        let _ = write!(out, ",pred_{l}");
    }
    out.push_str(",unparsed");
    for l in &letters {
        let _ = write!(out, ",gold_{l}");
    }
    out.push_str(",accuracy,statistic,df,p_value\n");
    for row in &sh.rows {
        out.push_str(&seed_label(row.seed));
        for c in row.predicted.iter().chain([&row.unparsed]).chain(&row.gold) {
            let _ = write!(out, ",{c}");
        }
        match &row.chi_square {
            Some(c) => {
                let _ = writeln!(out, ",{},{},{},{:e}", row.accuracy, c.statistic, c.df, c.p_value);
            }
            None => {
                let _ = writeln!(out, ",{},,,", row.accuracy);
            }
        }
    }
    out
}

pub fn recall_csv(curve: &[RecallPoint]) -> String {
    let mut out = String::from("k,all_generated,option_free\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.k, p.all_generated, p.option_free);
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("k,n,correct,accuracy\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.k, p.n, p.correct, p.accuracy);
    }
    out
}

pub fn histogram_csv(hist: &[(usize, usize)], bin_width: usize) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for &(start, count) in hist {
        let _ = writeln!(out, "{start},{},{count}", start + bin_width);
    }
    out
}
