//! Fit and stability metrics.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::svg;

/// Coefficient of determination of `estimated` against `observed`.
/// `None` when the observations have zero variance.
pub fn evaluate_r2(observed: &[f64], estimated: &[f64]) -> Result<Option<f64>> {
    if observed.len() != estimated.len() {
        return Err(Error::Shape {
            context: "R² inputs",
            expected: (observed.len(), 1),
            actual: (estimated.len(), 1),
        });
    }
    if observed.is_empty() {
        return Ok(None);
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = observed
        .iter()
        .zip(estimated)
        .map(|(o, e)| (o - e).powi(2))
        .sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

/// Mean DAR over days and each day's Frobenius distance to it.
#[derive(Clone, Debug)]
pub struct DarStability {
    pub mean: CsrMatrix,
    pub distances: Vec<f64>,
}

pub fn dar_stability(dars: &[&CsrMatrix]) -> Result<DarStability> {
    let first = dars
        .first()
        .ok_or_else(|| Error::Contract("DAR stability needs at least one day".into()))?;
    if let Some(bad) = dars.iter().find(|d| d.shape() != first.shape()) {
        return Err(Error::Shape {
            context: "DAR stability",
            expected: first.shape(),
            actual: bad.shape(),
        });
    }
    let w = vec![1.0 / dars.len() as f64; dars.len()];
    let mean = CsrMatrix::weighted_sum(dars, &w);
    let distances = dars.iter().map(|d| d.frobenius_distance(&mean)).collect();
    Ok(DarStability { mean, distances })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the data range.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn save_histogram(dir: &Path, stem: &str, title: &str, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .map(|b| (0.5 * (b.lo + b.hi), b.count as f64))
        .collect();
    let chart = svg::line_chart(
        title,
        "value",
        "days",
        &[svg::Series {
            name: "count",
            points: pts,
        }],
        svg::Scale::Linear,
    );
    svg::save(&dir.join(format!("{stem}.svg")), &chart)
}

/// Recovery of known demand on entries above a size threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthAccuracy {
    pub threshold: f64,
    pub entries: usize,
    pub within_tolerance: usize,
    pub tolerance: f64,
    pub worst_relative_error: f64,
    pub r2: Option<f64>,
}

pub fn truth_accuracy(
    truth: &[f64],
    estimate: &[f64],
    threshold: f64,
    tolerance: f64,
) -> Result<TruthAccuracy> {
    let r2 = evaluate_r2(truth, estimate)?;
    let mut entries = 0;
    let mut within = 0;
    let mut worst = 0.0f64;
    for (t, e) in truth.iter().zip(estimate) {
        if *t > threshold {
            entries += 1;
            let rel = (e - t).abs() / t;
            worst = worst.max(rel);
            if rel <= tolerance {
                within += 1;
            }
        }
    }
    Ok(TruthAccuracy {
        threshold,
        entries,
        within_tolerance: within,
        tolerance,
        worst_relative_error: worst,
        r2,
    })
}
