//! Scores how strongly keypoint and non-keypoint patches attend to each
//! other in every head, and how gamma shifts the attended sets.

mod support;

use keypoint_attention::analysis::{analyze_head, AnalysisParams, PatchAttention, Weighting};
use keypoint_attention::patch::{assign_keypoints, PatchGrid};
use keypoint_attention::sift::{detect_keypoints, SiftParams};
use keypoint_attention::vit::{forward_with_attention, ViTConfig, ViTWeights};

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.4}"))
}

fn main() {
    let cfg = ViTConfig::default();
    let img = support::scene(cfg.image_size);
    let stats = assign_keypoints(&PatchGrid::new(64, 64, cfg.patch_size).unwrap(), &detect_keypoints(&img, &SiftParams::default())).unwrap();
    let weights = ViTWeights::seeded(&cfg, 11).unwrap();
    let out = forward_with_attention(&support::scene_rgb(64), &cfg, &weights).unwrap();

    println!("layer head   kk     kn     nk     nn    undefined");
    for rec in &out.records {
        let alpha = PatchAttention::from_record(rec, false).unwrap();
        let h = analyze_head(rec.layer, rec.head, &alpha, &stats, &AnalysisParams::default()).unwrap();
        let g = h.global;
        println!(
            "{:>5} {:>4}  {} {} {} {}  {}",
            g.layer,
            g.head,
            fmt(g.theta_kk),
            fmt(g.theta_kn),
            fmt(g.theta_nk),
            fmt(g.theta_nn),
            g.undefined_count
        );
    }

    let alpha = PatchAttention::from_record(&out.records[0], false).unwrap();
    for gamma in [0.5, 1.0, 1.5, 2.0] {
        for weighting in [Weighting::Weighted, Weighting::Unweighted] {
            let params = AnalysisParams { gamma, weighting };
            let g = analyze_head(0, 0, &alpha, &stats, &params).unwrap().global;
            println!("gamma {gamma} {weighting:?}: kk {} nk {} undefined {}", fmt(g.theta_kk), fmt(g.theta_nk), g.undefined_count);
        }
    }
}
