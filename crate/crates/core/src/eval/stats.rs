//! Chi-square goodness of fit with a self-contained regularized
//! incomplete gamma function.

use serde::{Deserialize, Serialize};

use super::EvalError;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn prefactor(a: f64, x: f64) -> f64 {
    (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Lower regularized gamma P(a, x) by its power series; valid for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

/// Upper regularized gamma Q(a, x) by modified Lentz continued fraction; valid for x ≥ a + 1.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q needs a > 0");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).max(0.0)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Upper tail of the χ² distribution.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    gamma_q(df as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
    /// Category indices dropped because their expected count was zero.
    pub dropped: Vec<usize>,
}

impl ChiSquare {
    pub fn p_display(&self) -> String {
        format_p(self.p_value)
    }
}

/// Goodness of fit of `predicted` counts against the distribution of `gold`.
pub fn chi_square_bias(predicted: &[u64], gold: &[u64]) -> Result<ChiSquare, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::Invalid(format!(
            "count vectors differ in length ({} vs {})",
            predicted.len(),
            gold.len()
        )));
    }
    let total_pred: u64 = predicted.iter().sum();
    let total_gold: u64 = gold.iter().sum();
    if total_pred == 0 {
        return Err(EvalError::Invalid("no predictions to test".into()));
    }
    if total_gold == 0 {
        return Err(EvalError::Invalid("all expected counts are zero".into()));
    }
    let mut statistic = 0.0;
    let mut kept = 0usize;
    let mut dropped = Vec::new();
    for (i, (&o, &g)) in predicted.iter().zip(gold).enumerate() {
        if g == 0 {
            dropped.push(i);
            continue;
        }
        let expected = g as f64 / total_gold as f64 * total_pred as f64;
        let diff = o as f64 - expected;
        statistic += diff * diff / expected;
        kept += 1;
    }
    if kept < 2 {
        return Err(EvalError::Invalid("fewer than two categories with nonzero expectation".into()));
    }
    let df = kept - 1;
    Ok(ChiSquare {
        statistic,
        p_value: chi2_sf(statistic, df),
        df,
        dropped,
    })
}

/// Two significant digits, clamped below at 10^-10.
pub fn format_p(p: f64) -> String {
    if p < 1e-10 {
        "< 10^-10".to_string()
    } else if p >= 0.01 {
        format!("{p:.2}")
    } else {
        format!("{p:.1e}")
    }
}
