//! Diagnostic ratios, background fitting, classification and the statistics
//! used to score a scan against ground truth.

mod fit;
mod rank;
mod ratio;
mod roc;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use fit::{fit_background, BackgroundFit, BackgroundProblem, FitSettings};
pub use rank::{average_ranks, spearman};
pub use ratio::{ratio_eq1, ratio_eq2};
pub use roc::{confusion_at, optimal_threshold, roc, ConfusionCounts, RocCurve, RocPoint};

use crate::error::{Error, Result};

/// Divides every value by the maximum so that the peak becomes 1.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Degenerate(
            "normalisation needs at least one positive value".into(),
        ));
    }
    Ok(values.iter().map(|v| v / max).collect())
}

/// Per-cell two-channel ratios over a scan grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMap {
    pub rows: usize,
    pub cols: usize,
    pub positions: Vec<(f64, f64)>,
    pub raw_ratio: Vec<f64>,
    pub normalized_ratio: Vec<f64>,
    pub alpha: f64,
}

impl RatioMap {
    /// Builds the map from per-cell channel intensities (counts or powers).
    pub fn from_channels(
        rows: usize,
        cols: usize,
        positions: Vec<(f64, f64)>,
        i635: &[f64],
        i514: &[f64],
        alpha: f64,
    ) -> Result<Self> {
        let n = rows * cols;
        for len in [positions.len(), i635.len(), i514.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    left: len,
                    right: n,
                });
            }
        }
        let raw_ratio = i635
            .iter()
            .zip(i514)
            .map(|(r, g)| ratio_eq2(*r, *g, alpha))
            .collect::<Result<Vec<_>>>()?;
        let normalized_ratio = normalize(&raw_ratio)?;
        Ok(RatioMap {
            rows,
            cols,
            positions,
            raw_ratio,
            normalized_ratio,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.raw_ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ratio.is_empty()
    }

    /// Writes `x_mm,y_mm,raw_ratio,normalized_ratio,predicted,truth`.
    pub fn write_csv<W: Write>(&self, writer: W, predicted: &[bool], truth: &[bool]) -> Result<()> {
        if predicted.len() != self.len() || truth.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: predicted.len().min(truth.len()),
                right: self.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            w.serialize(RatioRow {
                x_mm: self.positions[i].0,
                y_mm: self.positions[i].1,
                raw_ratio: self.raw_ratio[i],
                normalized_ratio: self.normalized_ratio[i],
                predicted: predicted[i] as u8,
                truth: truth[i] as u8,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a ratio-map CSV back into rows.
    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<Vec<RatioRow>> {
        let mut r = csv::Reader::from_reader(reader);
        let expected = [
            "x_mm",
            "y_mm",
            "raw_ratio",
            "normalized_ratio",
            "predicted",
            "truth",
        ];
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema {
                source_name: source_name.into(),
                detail: format!("expected header `{}`", expected.join(",")),
            });
        }
        r.deserialize()
            .enumerate()
            .map(|(i, row)| {
                row.map_err(|e| Error::Schema {
                    source_name: source_name.into(),
                    detail: format!("row {}: {e}", i + 1),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub x_mm: f64,
    pub y_mm: f64,
    pub raw_ratio: f64,
    pub normalized_ratio: f64,
    pub predicted: u8,
    pub truth: u8,
}

/// Positive calls: `ratio >= threshold` on the normalised or raw ratios.
pub fn classify(map: &RatioMap, threshold: f64, normalized: bool) -> Vec<bool> {
    let values = if normalized {
        &map.normalized_ratio
    } else {
        &map.raw_ratio
    };
    values.iter().map(|v| *v >= threshold).collect()
}
