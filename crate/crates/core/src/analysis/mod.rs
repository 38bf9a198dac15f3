//! Keypoint-aware analysis of attention matrices.
//!
//! Everything here works on the `N x N` patch-to-patch block of a head's
//! attention ([`PatchAttention`]); a CLS row and column, if present, are
//! removed before any score is computed.

mod focus;
mod interrelation;
mod profile;
mod stages;

use thiserror::Error;

pub use focus::{focus_index, row_entropy, FocusIndex};
pub use interrelation::{
    aggregate, attended_set, detection_threshold, global_thetas, mean_theta_over, patch_scores,
    per_patch_mean_theta, theta, AnalysisParams, AttendedSet, GlobalScores, InterrelationScore, Weighting,
};
pub use profile::{analyze_head, layer_profile, HeadAnalysis, LayerProfile, LayerRow, PROFILE_CSV_HEADER};
pub use stages::{segment_series, segment_stages, Stage, StageRule, StageSegmentation};

use crate::vit::AttentionRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("attention covers {attention} patches but the grid has {patches}")]
    Mismatch { attention: usize, patches: usize },
    #[error("attention matrix is not square or has the wrong size: {0}")]
    Shape(String),
    #[error("missing attention for layer {layer}, head {head}")]
    Incomplete { layer: usize, head: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

/// Row-major `N x N` patch-to-patch attention in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAttention {
    n: usize,
    data: Vec<f64>,
}

impl PatchAttention {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, AnalysisError> {
        if data.len() != n * n {
            return Err(AnalysisError::Shape(format!("{} values for a {n}x{n} matrix", data.len())));
        }
        Ok(PatchAttention { n, data })
    }

    /// Drops the leading CLS row and column when `has_cls` is set.
    pub fn from_record(rec: &AttentionRecord, has_cls: bool) -> Result<Self, AnalysisError> {
        let shape = rec.alpha.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(AnalysisError::Shape(format!("record shape {shape:?}")));
        }
        let t = shape[0];
        let skip = usize::from(has_cls);
        if t < skip {
            return Err(AnalysisError::Shape("CLS token declared on an empty matrix".into()));
        }
        let n = t - skip;
        let mut data = Vec::with_capacity(n * n);
        for i in skip..t {
            data.extend(rec.alpha.row(i)[skip..].iter().map(|&a| a as f64));
        }
        Ok(PatchAttention { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean attention each patch receives (column means).
    pub fn received(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n];
        for i in 0..self.n {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        let n = self.n.max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}
