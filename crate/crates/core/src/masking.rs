//! Mask plans over the patch grid: ranked Top/Bottom masks from per-patch
//! scores, keypoint-guided masks with a keypoint fraction `beta`, curriculum
//! schedules over rounds, and pixel-level application of a plan.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbImage;
use crate::patch::{split_identity_sets, PatchGrid, PatchStats};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("invalid mask parameter: {0}")]
    Param(String),
    #[error("plan does not fit the grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Highest scores first.
    Top,
    /// Lowest scores first.
    Bottom,
    Guided,
    Random,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Top => "top",
            MaskMode::Bottom => "bottom",
            MaskMode::Guided => "guided",
            MaskMode::Random => "random",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top" => Ok(MaskMode::Top),
            "bottom" => Ok(MaskMode::Bottom),
            "guided" => Ok(MaskMode::Guided),
            "random" => Ok(MaskMode::Random),
            _ => Err(format!("unknown mask mode '{s}' (expected top, bottom, guided or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub mode: MaskMode,
    pub r: f64,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    /// Ascending patch indices.
    pub masked: Vec<usize>,
    /// Set when a guided plan could not honour `beta` and was backfilled
    /// from the other identity pool.
    pub shortfall: bool,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn contains(&self, patch: usize) -> bool {
        self.masked.binary_search(&patch).is_ok()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

fn check_ratio(r: f64) -> Result<(), MaskError> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(MaskError::Param(format!("mask ratio must be in (0, 1], got {r}")))
    }
}

fn check_beta(beta: f64) -> Result<(), MaskError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(MaskError::Param(format!("beta must be in [0, 1], got {beta}")))
    }
}

/// `round(n * r)` clamped to `[0, n]`.
pub fn masked_count(n: usize, r: f64) -> usize {
    ((n as f64 * r).round().max(0.0) as usize).min(n)
}

/// Ties are broken by ascending patch index in both modes.
pub fn rank_mask(scores: &[f64], r: f64, mode: MaskMode) -> Result<MaskPlan, MaskError> {
    check_ratio(r)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match mode {
        MaskMode::Top => order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))),
        MaskMode::Bottom => order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))),
        other => return Err(MaskError::Param(format!("rank_mask needs top or bottom, got {other}"))),
    }
    let mut masked = order[..masked_count(scores.len(), r)].to_vec();
    masked.sort_unstable();
    Ok(MaskPlan {
        mode,
        r,
        beta: None,
        seed: None,
        masked,
        shortfall: false,
    })
}

fn pick(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Masks `round(N r)` patches of which `round(M beta)` are keypoint patches,
/// each pool sampled uniformly without replacement.
pub fn guided_mask(stats: &PatchStats, r: f64, beta: f64, seed: u64) -> Result<MaskPlan, MaskError> {
    check_ratio(r)?;
    check_beta(beta)?;
    let m = masked_count(stats.len(), r);
    let (keys, nons) = split_identity_sets(stats);
    let want_key = ((m as f64 * beta).round() as usize).min(m);
    let want_non = m - want_key;
    let (k_key, k_non) = if want_key > keys.len() {
        (keys.len(), m - keys.len())
    } else if want_non > nons.len() {
        (m - nons.len(), nons.len())
    } else {
        (want_key, want_non)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = pick(&keys, k_key, &mut rng);
    masked.extend(pick(&nons, k_non, &mut rng));
    masked.sort_unstable();
    Ok(MaskPlan {
        mode: MaskMode::Guided,
        r,
        beta: Some(beta),
        seed: Some(seed),
        masked,
        shortfall: k_key != want_key,
    })
}

/// Identity-blind baseline: `round(N r)` patches uniformly at random.
pub fn random_mask(n: usize, r: f64, seed: u64) -> Result<MaskPlan, MaskError> {
    check_ratio(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = sample(&mut rng, n, masked_count(n, r)).into_vec();
    masked.sort_unstable();
    Ok(MaskPlan {
        mode: MaskMode::Random,
        r,
        beta: None,
        seed: Some(seed),
        masked,
        shortfall: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub beta: f64,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub ratio: f64,
    pub stages: Vec<CurriculumStage>,
}

impl CurriculumSchedule {
    /// Stages must be non-empty, last at least one round each, and never
    /// lower `beta`.
    pub fn new(ratio: f64, stages: Vec<CurriculumStage>) -> Result<Self, MaskError> {
        check_ratio(ratio)?;
        if stages.is_empty() {
            return Err(MaskError::Param("schedule has no stages".into()));
        }
        for s in &stages {
            check_beta(s.beta)?;
            if s.rounds == 0 {
                return Err(MaskError::Param("stage duration must be at least one round".into()));
            }
        }
        if stages.windows(2).any(|w| w[1].beta < w[0].beta) {
            return Err(MaskError::Param("stage betas must be non-decreasing".into()));
        }
        Ok(CurriculumSchedule { ratio, stages })
    }

    /// Five stages of ten rounds, `beta` = 0.1, 0.2, ..., 0.5.
    pub fn standard(ratio: f64) -> Result<Self, MaskError> {
        let stages = (1..=5)
            .map(|k| CurriculumStage {
                beta: k as f64 / 10.0,
                rounds: 10,
            })
            .collect();
        Self::new(ratio, stages)
    }

    pub fn total_rounds(&self) -> usize {
        self.stages.iter().map(|s| s.rounds).sum()
    }

    /// Index of the stage covering `round`; the last stage persists past the
    /// end of the schedule.
    pub fn stage_for_round(&self, round: usize) -> usize {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.rounds;
            if round < end {
                return i;
            }
        }
        self.stages.len() - 1
    }

    pub fn beta_for_round(&self, round: usize) -> f64 {
        self.stages[self.stage_for_round(round)].beta
    }
}

/// Guided plan for one round, seeded with `seed ^ round`.
pub fn schedule_masks(
    stats: &PatchStats,
    schedule: &CurriculumSchedule,
    round: usize,
    seed: u64,
) -> Result<MaskPlan, MaskError> {
    guided_mask(stats, schedule.ratio, schedule.beta_for_round(round), seed ^ round as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fill {
    /// Per-image channel mean.
    #[default]
    Mean,
    Gray,
    Black,
}

impl FromStr for Fill {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Fill::Mean),
            "gray" => Ok(Fill::Gray),
            "black" => Ok(Fill::Black),
            _ => Err(format!("unknown fill '{s}' (expected mean, gray or black)")),
        }
    }
}

pub fn apply_mask(img: &RgbImage, plan: &MaskPlan, grid: &PatchGrid, fill: Fill) -> Result<RgbImage, MaskError> {
    if (img.width(), img.height()) != (grid.width(), grid.height()) {
        return Err(MaskError::Grid(format!(
            "image is {}x{} but the grid covers {}x{}",
            img.width(),
            img.height(),
            grid.width(),
            grid.height()
        )));
    }
    if let Some(&bad) = plan.masked.iter().find(|&&p| p >= grid.len()) {
        return Err(MaskError::Grid(format!("patch {bad} outside a grid of {}", grid.len())));
    }
    let value = match fill {
        Fill::Mean => img.channel_mean(),
        Fill::Gray => [0.5; 3],
        Fill::Black => [0.0; 3],
    };
    let p = grid.patch_size;
    let mut out = img.clone();
    for &patch in &plan.masked {
        let (row, col) = grid.position(patch);
        for y in row * p..(row + 1) * p {
            for x in col * p..(col + 1) * p {
                out.set_pixel(x, y, value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.1, 0.5, 0.3];
        assert_eq!(rank_mask(&s, 0.25, MaskMode::Top).unwrap().masked, vec![0]);
        assert_eq!(rank_mask(&s, 0.25, MaskMode::Bottom).unwrap().masked, vec![1]);
        assert_eq!(rank_mask(&[0.4; 4], 0.5, MaskMode::Top).unwrap().masked, vec![0, 1]);
        assert_eq!(rank_mask(&[0.4; 4], 0.5, MaskMode::Bottom).unwrap().masked, vec![0, 1]);
        assert!(rank_mask(&s, 0.0, MaskMode::Top).is_err());
        assert!(rank_mask(&s, 0.5, MaskMode::Guided).is_err());
    }

    #[test]
    fn counts_round_half_away() {
        assert_eq!(masked_count(256, 0.05), 13);
        assert_eq!(masked_count(4, 0.125), 1);
        assert_eq!(masked_count(10, 1.0), 10);
    }

    #[test]
    fn guided_extremes() {
        let stats = PatchStats::from_counts((0..16).map(|i| u32::from(i % 2 == 0)).collect());
        let p = guided_mask(&stats, 0.5, 0.0, 7).unwrap();
        assert!(p.masked.iter().all(|&j| !stats.is_keypoint(j)));
        let p = guided_mask(&stats, 0.5, 1.0, 7).unwrap();
        assert!(p.masked.iter().all(|&j| stats.is_keypoint(j)));
        assert!(!p.shortfall);
    }

    #[test]
    fn guided_shortfall_backfills() {
        let stats = PatchStats::from_counts(vec![1, 0, 0, 0, 0, 0, 0, 0]);
        let p = guided_mask(&stats, 0.5, 1.0, 3).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.contains(0));
        assert!(p.shortfall);
    }

    #[test]
    fn schedule_lookup() {
        let s = CurriculumSchedule::standard(0.5).unwrap();
        let betas: Vec<f64> = [0, 9, 10, 25, 49, 999].iter().map(|&r| s.beta_for_round(r)).collect();
        assert_eq!(betas, vec![0.1, 0.1, 0.2, 0.3, 0.5, 0.5]);
        assert!(CurriculumSchedule::new(0.5, vec![]).is_err());
        let down = vec![CurriculumStage { beta: 0.3, rounds: 1 }, CurriculumStage { beta: 0.2, rounds: 1 }];
        assert!(CurriculumSchedule::new(0.5, down).is_err());
    }

    #[test]
    fn schedule_seeds_per_round() {
        let stats = PatchStats::from_counts((0..64).map(|i| u32::from(i % 3 == 0)).collect());
        let s = CurriculumSchedule::standard(0.25).unwrap();
        let p = schedule_masks(&stats, &s, 12, 100).unwrap();
        assert_eq!(p, guided_mask(&stats, 0.25, 0.2, 100 ^ 12).unwrap());
    }

    #[test]
    fn apply_single_patch() {
        let img = RgbImage::from_vec(4, 4, (0..48).map(|i| i as f32 / 48.0).collect()).unwrap();
        let grid = PatchGrid::new(4, 4, 2).unwrap();
        let plan = MaskPlan { mode: MaskMode::Top, r: 0.25, beta: None, seed: None, masked: vec![3], shortfall: false };
        let out = apply_mask(&img, &plan, &grid, Fill::Black).unwrap();
        let changed = img.data().iter().zip(out.data()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 2 * 2 * 3);
        assert_eq!(out.pixel(3, 3), [0.0; 3]);
        assert_eq!(out.pixel(1, 1), img.pixel(1, 1));
    }

    #[test]
    fn plan_json_fields() {
        let plan = MaskPlan { mode: MaskMode::Guided, r: 0.5, beta: Some(0.25), seed: Some(9), masked: vec![1, 4], shortfall: false };
        assert_eq!(plan.to_json(), r#"{"mode":"guided","r":0.5,"beta":0.25,"seed":9,"masked":[1,4],"shortfall":false}"#);
    }
}
