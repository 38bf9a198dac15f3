//! Attention focus index: mean entropy of min-max-normalized attention rows.
//!
//! Each row is rescaled to `[0, 1]`, renormalized to sum to one, and scored
//! with its Shannon entropy (natural log, `0 ln 0 = 0`). A constant row has no
//! preferred patch and is assigned `ln N`. Lower values mean attention
//! concentrated on fewer patches.

use serde::Serialize;

use super::PatchAttention;

pub fn row_entropy(row: &[f64]) -> f64 {
    let n = row.len();
    if n == 0 {
        return 0.0;
    }
    let (min, max) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return (n as f64).ln();
    }
    let span = max - min;
    let scaled: Vec<f64> = row.iter().map(|&v| (v - min) / span).collect();
    let total: f64 = scaled.iter().sum();
    -scaled
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            p * p.ln()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocusIndex {
    pub layer: usize,
    pub head: usize,
    /// Mean of `per_row`.
    pub delta: f64,
    pub per_row: Vec<f64>,
}

pub fn focus_index(alpha: &PatchAttention) -> FocusIndex {
    let per_row: Vec<f64> = (0..alpha.n()).map(|i| row_entropy(alpha.row(i))).collect();
    let delta = if per_row.is_empty() {
        0.0
    } else {
        per_row.iter().sum::<f64>() / per_row.len() as f64
    };
    FocusIndex {
        layer: 0,
        head: 0,
        delta,
        per_row,
    }
}
