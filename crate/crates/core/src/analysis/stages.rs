//! Three-stage split of a layer profile: Retrieval, Capture, Coach.
//!
//! `b1` is the first layer whose mean θ_KK is above the profile mean while
//! its focus index is below the focus mean. `b2` is the first layer after
//! `b1` that starts a two-layer decline in θ_KK or a two-layer rise in the
//! focus index. Either boundary falls back to `L / 3` and `2L / 3` when its
//! condition never fires, and the pair is clamped to `1 <= b1 < b2 < L`.

use serde::{Deserialize, Serialize};

use super::{AnalysisError, LayerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieval,
    Capture,
    Coach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageRule {
    /// Both boundaries came from the profile.
    Threshold,
    /// At least one boundary is a thirds fallback.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSegmentation {
    pub b1: usize,
    pub b2: usize,
    pub rule: StageRule,
}

impl StageSegmentation {
    pub fn stage_of(&self, layer: usize) -> Stage {
        if layer < self.b1 {
            Stage::Retrieval
        } else if layer < self.b2 {
            Stage::Capture
        } else {
            Stage::Coach
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("segmentation serializes")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn thirds(layers: usize) -> StageSegmentation {
    clamp(layers / 3, 2 * layers / 3, layers, StageRule::Fallback)
}

fn clamp(b1: usize, b2: usize, layers: usize, rule: StageRule) -> StageSegmentation {
    let b1 = b1.clamp(1, layers - 2);
    let b2 = b2.clamp(b1 + 1, layers - 1);
    StageSegmentation { b1, b2, rule }
}

/// `kk` and `focus` are per-layer means, in layer order.
pub fn segment_series(kk: &[f64], focus: &[f64]) -> Result<StageSegmentation, AnalysisError> {
    let layers = kk.len();
    if layers != focus.len() {
        return Err(AnalysisError::Shape(format!(
            "{} theta values but {} focus values",
            layers,
            focus.len()
        )));
    }
    if layers < 3 {
        return Err(AnalysisError::NotApplicable(format!(
            "stage segmentation needs at least 3 layers, got {layers}"
        )));
    }
    let (kk_mean, fi_mean) = (mean(kk), mean(focus));
    let b1 = (0..layers).find(|&l| kk[l] > kk_mean && focus[l] < fi_mean);
    let b2 = b1.and_then(|b1| {
        (b1 + 1..layers - 1).find(|&l| {
            let falls = kk[l] < kk[l - 1] && kk[l + 1] < kk[l];
            let rises = focus[l] > focus[l - 1] && focus[l + 1] > focus[l];
            falls || rises
        })
    });
    let fallback = thirds(layers);
    let rule = if b1.is_some() && b2.is_some() {
        StageRule::Threshold
    } else {
        StageRule::Fallback
    };
    Ok(clamp(b1.unwrap_or(fallback.b1), b2.unwrap_or(fallback.b2), layers, rule))
}

/// Layers with an inapplicable θ_KK (no keypoint patch) make the profile
/// unusable for the threshold rule, so those profiles get the thirds split.
pub fn segment_stages(profile: &LayerProfile) -> Result<StageSegmentation, AnalysisError> {
    let layers = profile.layers.len();
    if layers < 3 {
        return Err(AnalysisError::NotApplicable(format!(
            "stage segmentation needs at least 3 layers, got {layers}"
        )));
    }
    let kk: Option<Vec<f64>> = profile.layers.iter().map(|r| r.theta_kk).collect();
    let focus: Vec<f64> = profile.layers.iter().map(|r| r.focus_index).collect();
    match kk {
        Some(kk) => segment_series(&kk, &focus),
        None => Ok(thirds(layers)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_profile_is_thirds() {
        let s = segment_series(&[0.3; 24], &[2.0; 24]).unwrap();
        assert_eq!((s.b1, s.b2, s.rule), (8, 16, StageRule::Fallback));
    }

    #[test]
    fn three_layer_peak() {
        let s = segment_series(&[0.2, 0.8, 0.3], &[3.0, 1.0, 2.5]).unwrap();
        assert_eq!((s.b1, s.b2), (1, 2));
    }

    #[test]
    fn plateau_then_dip() {
        let kk: Vec<f64> = (0..24)
            .map(|l| match l {
                0..=7 => 0.2,
                8..=19 => 0.8,
                _ => 0.8 - 0.05 * (l - 19) as f64,
            })
            .collect();
        let fi: Vec<f64> = kk.iter().map(|k| 4.0 - 2.0 * k).collect();
        let s = segment_series(&kk, &fi).unwrap();
        assert_eq!((s.b1, s.b2, s.rule), (8, 20, StageRule::Threshold));
        assert_eq!(s.stage_of(7), Stage::Retrieval);
        assert_eq!(s.stage_of(8), Stage::Capture);
        assert_eq!(s.stage_of(23), Stage::Coach);
    }

    #[test]
    fn too_short() {
        assert!(matches!(segment_series(&[0.1, 0.2], &[1.0, 1.0]), Err(AnalysisError::NotApplicable(_))));
    }

    #[test]
    fn json_shape() {
        let s = StageSegmentation { b1: 1, b2: 3, rule: StageRule::Threshold };
        assert_eq!(s.to_json(), r#"{"b1":1,"b2":3,"rule":"threshold"}"#);
    }
}
