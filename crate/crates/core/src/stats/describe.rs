use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on histogram bins, guards against pathological FD widths.
const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    /// Moment coefficient of skewness g1.
    pub skewness: f64,
    /// Moment excess kurtosis g2.
    pub excess_kurtosis: f64,
    pub histogram: Histogram,
}

/// Central moments m2, m3, m4 about the mean.
pub(crate) fn central_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn histogram(sorted: &[f64]) -> Histogram {
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let bins = if iqr > 0.0 {
        let width = 2.0 * iqr / (n as f64).cbrt();
        ((hi - lo) / width).ceil() as usize
    } else {
        // Sturges fallback when the middle half is tied
        (n as f64).log2().ceil() as usize + 1
    }
    .clamp(1, MAX_BINS);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in sorted {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

/// Moments and a Freedman–Diaconis histogram of a sample.
pub fn summarize(xs: &[f64]) -> Result<SampleSummary> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::SampleSize {
            got: n,
            needed: "n >= 3".into(),
        });
    }
    if !xs.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite value in sample".into()));
    }
    let (mean, m2, m3, m4) = central_moments(xs);
    if m2 == 0.0 {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SampleSummary {
        n,
        mean,
        std: (m2 * n as f64 / (n - 1) as f64).sqrt(),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        histogram: histogram(&sorted),
    })
}
