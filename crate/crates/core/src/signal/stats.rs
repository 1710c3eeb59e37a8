//! Channel RMS, Z-score outlier rejection and the two-sample t-test.

use serde::{Deserialize, Serialize};

use super::Recording;
use crate::error::{Error, Result};

/// Per-channel summary used for electrode quality control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub rms: Vec<f64>,
    pub zscore: Vec<f64>,
    pub outlier: Vec<bool>,
    pub threshold: f64,
}

impl ChannelStats {
    pub fn retained(&self) -> Vec<usize> {
        self.outlier
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| (!o).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    /// Classical equal-variance test.
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub dof: f64,
    pub variant: TTestVariant,
}

/// Root mean square of every channel, masked channels included.
pub fn rms_per_channel(rec: &Recording) -> Result<Vec<f64>> {
    if rec.num_samples() == 0 {
        return Err(Error::invalid("empty recording"));
    }
    let n = rec.num_samples() as f64;
    Ok(rec
        .samples()
        .columns()
        .into_iter()
        .map(|col| (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect())
}

/// Mean of the per-channel RMS values over active channels (or all of them).
pub fn overall_rms(rec: &Recording, use_mask: bool) -> Result<f64> {
    let rms = rms_per_channel(rec)?;
    let selected: Vec<f64> = rms
        .iter()
        .zip(rec.channel_mask())
        .filter(|(_, &on)| on || !use_mask)
        .map(|(&r, _)| r)
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid("no active channels"));
    }
    Ok(selected.iter().sum::<f64>() / selected.len() as f64)
}

fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Standardizes `values` and flags entries with `|z| > threshold`.
///
/// The standard deviation uses the `n - 1` denominator.
pub fn zscore_outliers(values: &[f64], threshold: f64) -> Result<ChannelStats> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "z-score needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    let (mean, var) = mean_and_sample_var(values);
    let std = var.sqrt();
    if std <= f64::EPSILON * mean.abs() {
        return Err(Error::DegenerateDistribution(
            "zero standard deviation".into(),
        ));
    }
    let zscore: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    let outlier = zscore.iter().map(|z| z.abs() > threshold).collect();
    Ok(ChannelStats {
        rms: values.to_vec(),
        zscore,
        outlier,
        threshold,
    })
}

pub fn two_sample_ttest(a: &[f64], b: &[f64], variant: TTestVariant) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "each group needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_and_sample_var(a);
    let (mb, vb) = mean_and_sample_var(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::DegenerateDistribution(
            "both groups have zero variance".into(),
        ));
    }
    let (se, dof) = match variant {
        TTestVariant::Pooled => {
            let dof = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / dof;
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), dof)
        }
        TTestVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let dof = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((qa + qb).sqrt(), dof)
        }
    };
    let t = (ma - mb) / se;
    Ok(TTestResult {
        t_statistic: t,
        p_value: student_t_two_sided_p(t, dof),
        dof,
        variant,
    })
}

/// Two-sided tail probability `P(|T| >= |t|)` of Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(x, dof / 2.0, 0.5).clamp(0.0, 1.0)
}

// Relative step tolerance; keeps the absolute error of I_x well below 1e-10.
const BETA_CF_TOL: f64 = 1e-13;
const BETA_CF_MAX_ITERS: usize = 500;

/// Regularized incomplete beta `I_x(a, b)`, evaluated by a modified-Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast only on this side of the mean; use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITERS {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_TOL {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
