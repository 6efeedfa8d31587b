//! Error aggregation over experiment runs: MAE, empirical quantiles, CDF
//! tables, and relative improvement.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which entity an error sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Vehicle,
    Cvt,
}

/// One positioning-error sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub run: u32,
    pub slot: u64,
    pub kind: EntityKind,
    pub entity: u64,
    /// Euclidean error, meters (2D for vehicles, 3D for CVTs).
    pub error: f64,
}

/// Mean absolute error.
pub fn mae(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Lower empirical quantile: the smallest sample `e` with `CDF(e) >= q`.
pub fn quantile_error(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Empirical CDF evaluated at each edge.
pub fn cdf_table(samples: &[f64], edges: &[f64]) -> Vec<(f64, f64)> {
    assert!(
        edges.windows(2).all(|w| w[0] < w[1]),
        "edges must be strictly increasing"
    );
    let n = samples.len();
    edges
        .iter()
        .map(|&edge| {
            let below = samples.iter().filter(|&&s| s <= edge).count();
            let p = if n == 0 { 0.0 } else { below as f64 / n as f64 };
            (edge, p)
        })
        .collect()
}

/// Relative improvement of `cooperative` over `baseline`, in percent.
pub fn improvement(baseline_mae: f64, cooperative_mae: f64) -> f64 {
    assert!(baseline_mae > 0.0, "baseline MAE must be positive");
    100.0 * (baseline_mae - cooperative_mae) / baseline_mae
}

/// Median of a non-empty slice.
pub fn median(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}
