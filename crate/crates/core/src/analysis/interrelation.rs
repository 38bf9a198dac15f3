//! Detection-line filtering, per-start-patch interrelation scores, and the
//! four global identity combinations.

use serde::Serialize;

use super::{AnalysisError, PatchAttention};
use crate::patch::PatchStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Keypoint patches count `t_j` times.
    #[default]
    Weighted,
    /// Every attended patch counts once.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    /// Detection-line height multiplier.
    pub gamma: f64,
    pub weighting: Weighting,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            gamma: 1.0,
            weighting: Weighting::Weighted,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(AnalysisError::Param(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `gamma * (sum of row) / N`.
pub fn detection_threshold(row: &[f64], gamma: f64) -> f64 {
    gamma * row.iter().sum::<f64>() / row.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttendedSet {
    pub start: usize,
    pub threshold: f64,
    /// All `j` with `alpha_ij >= threshold`, ascending.
    pub members: Vec<usize>,
    pub key: Vec<usize>,
    pub non: Vec<usize>,
}

impl AttendedSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn attended_set(row: &[f64], gamma: f64, stats: &PatchStats, start: usize) -> AttendedSet {
    debug_assert_eq!(row.len(), stats.len());
    let threshold = detection_threshold(row, gamma);
    let members: Vec<usize> = row
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a >= threshold)
        .map(|(j, _)| j)
        .collect();
    let (key, non) = members.iter().partition(|&&j| stats.is_keypoint(j));
    AttendedSet {
        start,
        threshold,
        members,
        key,
        non,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterrelationScore {
    pub start: usize,
    pub unweighted: f64,
    pub weighted: f64,
    /// `false` iff the attended set was empty; the values are then 0 and must
    /// not enter any average.
    pub defined: bool,
}

impl InterrelationScore {
    pub fn value(&self, weighting: Weighting) -> Option<f64> {
        self.defined.then_some(match weighting {
            Weighting::Weighted => self.weighted,
            Weighting::Unweighted => self.unweighted,
        })
    }
}

pub fn theta(att: &AttendedSet, stats: &PatchStats) -> InterrelationScore {
    if att.is_empty() {
        return InterrelationScore {
            start: att.start,
            unweighted: 0.0,
            weighted: 0.0,
            defined: false,
        };
    }
    let non = att.non.len() as f64;
    let key = att.key.len() as f64;
    let key_mass: f64 = att.key.iter().map(|&j| stats.counts()[j] as f64).sum();
    InterrelationScore {
        start: att.start,
        unweighted: key / (non + key),
        weighted: key_mass / (non + key_mass),
        defined: true,
    }
}

/// Scores for every start patch of one head.
pub fn patch_scores(alpha: &PatchAttention, stats: &PatchStats, gamma: f64) -> Vec<InterrelationScore> {
    (0..alpha.n())
        .map(|i| theta(&attended_set(alpha.row(i), gamma, stats, i), stats))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalScores {
    pub layer: usize,
    pub head: usize,
    /// `None` when no Keypoint start patch has a defined score.
    pub theta_kk: Option<f64>,
    pub theta_kn: Option<f64>,
    /// `None` when no Non-keypoint start patch has a defined score.
    pub theta_nk: Option<f64>,
    pub theta_nn: Option<f64>,
    /// Start patches excluded because their attended set was empty.
    pub undefined_count: usize,
}

/// Averages over start patches grouped by their identity. `theta_kn` and
/// `theta_nn` are the `1 - theta` averages, which reduce to `1 - theta_kk`
/// and `1 - theta_nk`.
pub fn aggregate(scores: &[InterrelationScore], stats: &PatchStats, weighting: Weighting) -> GlobalScores {
    let mut key = (0.0f64, 0usize);
    let mut non = (0.0f64, 0usize);
    let mut undefined = 0;
    for s in scores {
        match s.value(weighting) {
            Some(v) if stats.is_keypoint(s.start) => {
                key.0 += v;
                key.1 += 1;
            }
            Some(v) => {
                non.0 += v;
                non.1 += 1;
            }
            None => undefined += 1,
        }
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    let kk = mean(key);
    let nk = mean(non);
    GlobalScores {
        layer: 0,
        head: 0,
        theta_kk: kk,
        theta_kn: kk.map(|v| 1.0 - v),
        theta_nk: nk,
        theta_nn: nk.map(|v| 1.0 - v),
        undefined_count: undefined,
    }
}

pub fn global_thetas(alpha: &PatchAttention, stats: &PatchStats, params: &AnalysisParams) -> GlobalScores {
    aggregate(&patch_scores(alpha, stats, params.gamma), stats, params.weighting)
}

/// Mean score per patch across several heads. Undefined scores are skipped;
/// a patch that is undefined in every head gets 0.
pub fn mean_theta_over(head_scores: &[Vec<InterrelationScore>], weighting: Weighting) -> Vec<f64> {
    let n = head_scores.first().map_or(0, Vec::len);
    let mut sum = vec![0.0f64; n];
    let mut cnt = vec![0usize; n];
    for scores in head_scores {
        for s in scores {
            if let Some(v) = s.value(weighting) {
                sum[s.start] += v;
                cnt[s.start] += 1;
            }
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

pub fn per_patch_mean_theta(
    heads: &[&PatchAttention],
    stats: &PatchStats,
    params: &AnalysisParams,
) -> Result<Vec<f64>, AnalysisError> {
    if heads.is_empty() {
        return Err(AnalysisError::Param("at least one head must be selected".into()));
    }
    params.validate()?;
    let mut all = Vec::with_capacity(heads.len());
    for a in heads {
        if a.n() != stats.len() {
            return Err(AnalysisError::Mismatch {
                attention: a.n(),
                patches: stats.len(),
            });
        }
        all.push(patch_scores(a, stats, params.gamma));
    }
    Ok(mean_theta_over(&all, params.weighting))
}
