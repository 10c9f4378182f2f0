//! Sample summaries with normal (mean) and chi-square (variance) intervals.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Half-width of the 95% normal interval for the mean.
    pub ci_half: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub var_lo: f64,
    pub var_hi: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// 95% two-sided summary. Needs at least two samples.
pub fn summarize(xs: &[f64]) -> Result<SummaryStats> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let m = mean(xs);
    let s2 = sample_variance(xs);
    let z = Normal::standard().inverse_cdf(0.975);
    let chi = ChiSquared::new(n as f64 - 1.0).expect("positive degrees of freedom");
    let df = n as f64 - 1.0;
    Ok(SummaryStats {
        n,
        mean: m,
        ci_half: z * s2.sqrt() / (n as f64).sqrt(),
        variance: s2,
        var_lo: df * s2 / chi.inverse_cdf(0.975),
        var_hi: df * s2 / chi.inverse_cdf(0.025),
    })
}

impl SummaryStats {
    pub fn mean_interval(&self) -> (f64, f64) {
        (self.mean - self.ci_half, self.mean + self.ci_half)
    }

    /// Mean interval with its half-width scaled by `1 + widen`.
    pub fn widened_mean_interval(&self, widen: f64) -> (f64, f64) {
        let h = self.ci_half * (1.0 + widen);
        (self.mean - h, self.mean + h)
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}
