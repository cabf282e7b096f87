//! Per-site centering and scaling of raw observations.
//!
//! Each site is centered by the median of its positive observations and
//! scaled by their interquartile range, so a single spatially-constant
//! precision is meaningful across sites. The records invert the transform so
//! final results can be reported on the original scale.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShotError};
use crate::sparse::DenseMatrix;
use crate::special::quantile_type7_sorted;

/// Minimum number of positive observations a site needs for a stable
/// center/scale estimate.
pub const MIN_POSITIVE_OBS: usize = 20;

/// Per-site affine transform record: `y_std = (y - center) / scale`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub center: f64,
    pub scale: f64,
}

impl PreprocessRecord {
    pub fn transform(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn inverse(&self, y_std: f64) -> f64 {
        y_std * self.scale + self.center
    }
}

/// Center and scale an `N x T` matrix site by site. Quantiles use linear
/// interpolation (type 7).
pub fn preprocess(raw: &DenseMatrix) -> Result<(DenseMatrix, Vec<PreprocessRecord>)> {
    let n = raw.n_rows();
    let t = raw.n_cols();
    let mut out = DenseMatrix::zeros(n, t);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut positives: Vec<f64> = raw
            .row_slice(i)
            .iter()
            .cloned()
            .filter(|&v| v > 0.0)
            .collect();
        if positives.len() < MIN_POSITIVE_OBS {
            return Err(ShotError::Data(format!(
                "site {i} has only {} positive observations (needs {MIN_POSITIVE_OBS})",
                positives.len()
            )));
        }
        positives.sort_by(|a, b| a.partial_cmp(b).expect("NaN observation"));
        let center = quantile_type7_sorted(&positives, 0.5);
        let scale =
            quantile_type7_sorted(&positives, 0.75) - quantile_type7_sorted(&positives, 0.25);
        if !(scale > 0.0) {
            return Err(ShotError::Data(format!(
                "site {i} has a degenerate interquartile range ({scale})"
            )));
        }
        let rec = PreprocessRecord { center, scale };
        for tt in 0..t {
            *out.at_mut(i, tt) = rec.transform(raw.at(i, tt));
        }
        records.push(rec);
    }
    Ok((out, records))
}
