use super::{
    focus_index, global_thetas, mean_theta_over, patch_scores, AnalysisError, AnalysisParams, FocusIndex,
    GlobalScores, InterrelationScore, PatchAttention,
};
use crate::bundle::AttentionBundle;
use crate::patch::PatchStats;

pub const PROFILE_CSV_HEADER: &str = "layer,head,theta_kk,theta_kn,theta_nk,theta_nn,focus_index,undefined_count";

/// All scores of one `(layer, head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAnalysis {
    pub layer: usize,
    pub head: usize,
    pub scores: Vec<InterrelationScore>,
    pub global: GlobalScores,
    pub focus: FocusIndex,
}

pub fn analyze_head(
    layer: usize,
    head: usize,
    alpha: &PatchAttention,
    stats: &PatchStats,
    params: &AnalysisParams,
) -> Result<HeadAnalysis, AnalysisError> {
    params.validate()?;
    if alpha.n() != stats.len() {
        return Err(AnalysisError::Mismatch {
            attention: alpha.n(),
            patches: stats.len(),
        });
    }
    let scores = patch_scores(alpha, stats, params.gamma);
    let mut global = global_thetas(alpha, stats, params);
    global.layer = layer;
    global.head = head;
    let mut focus = focus_index(alpha);
    focus.layer = layer;
    focus.head = head;
    Ok(HeadAnalysis {
        layer,
        head,
        scores,
        global,
        focus,
    })
}

/// Head-averaged scores of one layer. Each average skips heads where the
/// score is not applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub layer: usize,
    pub theta_kk: Option<f64>,
    pub theta_kn: Option<f64>,
    pub theta_nk: Option<f64>,
    pub theta_nn: Option<f64>,
    pub focus_index: f64,
    /// Per-head values behind the averages, in head order.
    pub heads: Vec<GlobalScores>,
    pub head_focus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub params: AnalysisParams,
    pub heads_per_layer: usize,
    /// `(layer, head)` order.
    pub heads: Vec<HeadAnalysis>,
    /// Ascending layer order.
    pub layers: Vec<LayerRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl LayerProfile {
    /// Requires exactly one analysis for each `(layer, head)` in
    /// `0..layers x 0..heads_per_layer`.
    pub fn from_heads(
        mut heads: Vec<HeadAnalysis>,
        layers: usize,
        heads_per_layer: usize,
        params: AnalysisParams,
    ) -> Result<Self, AnalysisError> {
        heads.sort_by_key(|h| (h.layer, h.head));
        for layer in 0..layers {
            for head in 0..heads_per_layer {
                match heads.get(layer * heads_per_layer + head) {
                    Some(h) if (h.layer, h.head) == (layer, head) => {}
                    _ => return Err(AnalysisError::Incomplete { layer, head }),
                }
            }
        }
        if heads.len() != layers * heads_per_layer {
            return Err(AnalysisError::Shape(format!(
                "{} head analyses for {layers} layers x {heads_per_layer} heads",
                heads.len()
            )));
        }
        let rows = if heads_per_layer == 0 {
            Vec::new()
        } else {
            heads
                .chunks(heads_per_layer)
                .enumerate()
                .map(|(layer, chunk)| {
                    let globals: Vec<GlobalScores> = chunk.iter().map(|h| h.global).collect();
                    let focus: Vec<f64> = chunk.iter().map(|h| h.focus.delta).collect();
                    let kk = mean_of(globals.iter().map(|g| g.theta_kk));
                    let nk = mean_of(globals.iter().map(|g| g.theta_nk));
                    LayerRow {
                        layer,
                        theta_kk: kk,
                        theta_kn: kk.map(|v| 1.0 - v),
                        theta_nk: nk,
                        theta_nn: nk.map(|v| 1.0 - v),
                        focus_index: focus.iter().sum::<f64>() / focus.len() as f64,
                        heads: globals,
                        head_focus: focus,
                    }
                })
                .collect()
        };
        Ok(LayerProfile {
            params,
            heads_per_layer,
            heads,
            layers: rows,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Per-patch mean score over the heads of the selected layers (all layers
    /// when `layers` is `None`).
    pub fn mean_theta(&self, layers: Option<&[usize]>) -> Result<Vec<f64>, AnalysisError> {
        let selected: Vec<Vec<InterrelationScore>> = self
            .heads
            .iter()
            .filter(|h| layers.is_none_or(|ls| ls.contains(&h.layer)))
            .map(|h| h.scores.clone())
            .collect();
        if selected.is_empty() {
            return Err(AnalysisError::Param("layer selection contains no heads".into()));
        }
        Ok(mean_theta_over(&selected, self.params.weighting))
    }

    /// One line per head under [`PROFILE_CSV_HEADER`]; inapplicable scores
    /// are written as `NA`.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from(PROFILE_CSV_HEADER);
        out.push('\n');
        for h in &self.heads {
            let g = &h.global;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                h.layer,
                h.head,
                f(g.theta_kk),
                f(g.theta_kn),
                f(g.theta_nk),
                f(g.theta_nn),
                h.focus.delta,
                g.undefined_count
            ));
        }
        out
    }
}

pub fn layer_profile(
    bundle: &AttentionBundle,
    stats: &PatchStats,
    params: &AnalysisParams,
) -> Result<LayerProfile, AnalysisError> {
    let mut heads = Vec::with_capacity(bundle.records.len());
    for rec in &bundle.records {
        let alpha = PatchAttention::from_record(rec, bundle.meta.cls_token)?;
        heads.push(analyze_head(rec.layer, rec.head, &alpha, stats, params)?);
    }
    LayerProfile::from_heads(heads, bundle.meta.layers, bundle.meta.heads, *params)
}
