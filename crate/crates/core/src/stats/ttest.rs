//! Paired Student t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tails {
    /// Alternative: mean difference > 0.
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
    pub tails: Tails,
    pub mean_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TTestError {
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFew(usize),
    #[error("all paired differences are identical (mean difference {mean_difference}); variance is degenerate")]
    DegenerateVariance { mean_difference: f64 },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in paired samples")]
    NonFinite,
}

/// Paired t-test on `d = a - b`.
pub fn paired_t_test(pairs: &[(f64, f64)], tails: Tails) -> Result<TTestResult, TTestError> {
    let n = pairs.len();
    if n < 2 {
        return Err(TTestError::TooFew(n));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(TTestError::NonFinite);
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let ss: f64 = d.iter().map(|x| (x - mean).powi(2)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sd <= 64.0 * f64::EPSILON * scale || sd == 0.0 {
        return Err(TTestError::DegenerateVariance {
            mean_difference: mean,
        });
    }
    let t = mean / (sd / nf.sqrt());
    let df = n as u64 - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = match tails {
        Tails::Two => 2.0 * dist.cdf(-t.abs()),
        Tails::One => dist.cdf(-t),
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p.clamp(0.0, 1.0),
        tails,
        mean_difference: mean,
    })
}

pub fn paired_t_test_slices(a: &[f64], b: &[f64], tails: Tails) -> Result<TTestResult, TTestError> {
    if a.len() != b.len() {
        return Err(TTestError::LengthMismatch(a.len(), b.len()));
    }
    let pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    paired_t_test(&pairs, tails)
}

/// `min(1, p * m)`.
pub fn bonferroni_adjust(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}
