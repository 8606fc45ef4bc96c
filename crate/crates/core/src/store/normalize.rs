//! Per-feature quantile clipping followed by min-max scaling onto [-1, 1].

use serde::{Deserialize, Serialize};

use super::dataset::EmbeddingDataset;
use crate::error::{Error, Result};

pub const QUANTILE_LOW: f64 = 0.001;
pub const QUANTILE_HIGH: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub dim: usize,
    pub q_low: Vec<f64>,
    pub q_high: Vec<f64>,
}

/// Linear-interpolation quantile of an ascending slice (the "type 7" rule:
/// position `(n - 1) * p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_normalizer(data: &EmbeddingDataset) -> Result<NormalizationStats> {
    NormalizationStats::fit_rows(&data.rows_f64())
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::validation(format!("{what} component {i} is not finite"))),
        None => Ok(()),
    }
}

impl NormalizationStats {
    pub fn fit_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::validation(format!(
                "normalizer needs at least 2 records, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::validation(format!("row {r} has dimension {}, expected {dim}", row.len())));
            }
            check_finite(row, &format!("row {r}"))?;
        }
        let mut q_low = Vec::with_capacity(dim);
        let mut q_high = Vec::with_capacity(dim);
        let mut column = vec![0.0; rows.len()];
        for i in 0..dim {
            for (c, row) in column.iter_mut().zip(rows) {
                *c = row[i];
            }
            column.sort_by(f64::total_cmp);
            q_low.push(quantile_sorted(&column, QUANTILE_LOW));
            q_high.push(quantile_sorted(&column, QUANTILE_HIGH));
        }
        Ok(Self { dim, q_low, q_high })
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::validation(format!(
                "vector has dimension {len}, normalizer expects {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        check_finite(x, "input")?;
        Ok(x
            .iter()
            .zip(self.q_low.iter().zip(&self.q_high))
            .map(|(&v, (&lo, &hi))| {
                let span = hi - lo;
                if span <= 0.0 {
                    0.0
                } else {
                    (2.0 * (v.clamp(lo, hi) - lo) / span - 1.0).clamp(-1.0, 1.0)
                }
            })
            .collect())
    }

    pub fn denormalize(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y.len())?;
        check_finite(y, "input")?;
        Ok(y
            .iter()
            .zip(self.q_low.iter().zip(&self.q_high))
            .map(|(&v, (&lo, &hi))| {
                let span = hi - lo;
                if span <= 0.0 {
                    lo
                } else {
                    (lo + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * span).clamp(lo, hi)
                }
            })
            .collect())
    }

    pub fn normalize_dataset(&self, data: &EmbeddingDataset) -> Result<Vec<Vec<f64>>> {
        data.records().iter().map(|r| self.normalize(&r.to_f64())).collect()
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.q_low.iter().zip(&self.q_high))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }
}
