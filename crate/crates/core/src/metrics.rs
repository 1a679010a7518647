//! Localization error series, summary statistics and empirical CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridMap};

/// Per-step errors in meters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSeries(pub Vec<f64>);

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extend(&mut self, other: &ErrorSeries) {
        self.0.extend_from_slice(&other.0);
    }
}

/// Cell-center to cell-center distance per step.
pub fn error_series(estimates: &[CellIndex], truth: &[CellIndex], map: &GridMap) -> Result<ErrorSeries> {
    if estimates.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} reference cells",
            estimates.len(),
            truth.len()
        )));
    }
    Ok(ErrorSeries(
        estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| map.cell_center(*e).distance(&map.cell_center(*t)))
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub rms: f64,
    pub q80: f64,
    pub q95: f64,
    pub count: usize,
}

/// Quantile by linear interpolation between order statistics at rank
/// `p * (n - 1)`. `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(s: &ErrorSeries) -> Vec<f64> {
    let mut v = s.0.clone();
    v.sort_by(f64::total_cmp);
    v
}

pub fn stats(s: &ErrorSeries) -> Result<ErrorStats> {
    if s.is_empty() {
        return Err(Error::Empty("error series"));
    }
    // Sorted input makes the sums independent of the series order.
    let v = sorted(s);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let rms = (v.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    Ok(ErrorStats { mean, rms, q80: quantile(&v, 0.80), q95: quantile(&v, 0.95), count: v.len() })
}

/// Right-continuous empirical CDF: one point per distinct error, carrying
/// the fraction of samples at or below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve(pub Vec<(f64, f64)>);

pub fn cdf(s: &ErrorSeries) -> Result<CdfCurve> {
    if s.is_empty() {
        return Err(Error::Empty("error series"));
    }
    let v = sorted(s);
    let n = v.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (k, e) in v.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => points.push((*e, frac)),
        }
    }
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    Ok(CdfCurve(points))
}

/// `(a - b) / a` in percent: how much smaller `b` is than `a`.
pub fn percent_reduction(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        100.0 * (a - b) / a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    /// Percent by which `b`'s RMS is smaller than `a`'s.
    pub rms_reduction_pct: f64,
    pub q95_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pairs: Vec<PairComparison>,
    /// Method names by ascending RMS.
    pub ranking: Vec<String>,
}

pub fn compare(runs: &[(String, ErrorStats)]) -> Result<ComparisonReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two runs".into()));
    }
    let mut pairs = Vec::new();
    for (i, (na, a)) in runs.iter().enumerate() {
        for (nb, b) in &runs[i + 1..] {
            pairs.push(PairComparison {
                a: na.clone(),
                b: nb.clone(),
                rms_reduction_pct: percent_reduction(a.rms, b.rms),
                q95_reduction_pct: percent_reduction(a.q95, b.q95),
            });
        }
    }
    let mut order: Vec<&(String, ErrorStats)> = runs.iter().collect();
    order.sort_by(|x, y| x.1.rms.total_cmp(&y.1.rms));
    Ok(ComparisonReport { pairs, ranking: order.into_iter().map(|(n, _)| n.clone()).collect() })
}
