//! Writes attention maps from an outside model into a bundle file, reads it
//! back and analyzes it.

mod support;

use std::fs;

use keypoint_attention::analysis::{layer_profile, segment_stages, AnalysisParams};
use keypoint_attention::bundle::{AttentionBundle, BundleMeta};
use keypoint_attention::patch::{assign_keypoints, PatchGrid};
use keypoint_attention::sift::{detect_keypoints, SiftParams};
use keypoint_attention::tensor::Tensor;
use keypoint_attention::vit::AttentionRecord;

/// Attention that concentrates on patches near `(cx, cy)` more sharply in
/// deeper layers.
fn synthetic(layer: usize, head: usize, side: usize, cls: bool) -> Tensor {
    let n = side * side;
    let t = n + usize::from(cls);
    let (cx, cy) = ((head * 3 + 1) % side, (head * 5 + 2) % side);
    let sharp = 0.2 + layer as f32 * 0.6;
    let mut data = Vec::with_capacity(t * t);
    for _ in 0..t {
        let mut row: Vec<f32> = (0..t)
            .map(|j| {
                if cls && j == 0 {
                    return 1.0;
                }
                let p = j - usize::from(cls);
                let d2 = ((p % side) as f32 - cx as f32).powi(2) + ((p / side) as f32 - cy as f32).powi(2);
                (-sharp * d2 / side as f32).exp()
            })
            .collect();
        let s: f32 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        data.extend(row);
    }
    Tensor::from_rows(t, t, data)
}

fn main() {
    let meta = BundleMeta { image_size: 64, patch_size: 8, layers: 6, heads: 3, cls_token: true };
    let records = (0..meta.layers)
        .flat_map(|layer| (0..meta.heads).map(move |head| (layer, head)))
        .map(|(layer, head)| AttentionRecord { layer, head, alpha: synthetic(layer, head, 8, true) })
        .collect();
    let path = std::env::temp_dir().join("kpattn-example-bundle.vslt");
    AttentionBundle::new(meta, records).unwrap().save(&path).unwrap();
    println!("wrote {} ({} bytes)", path.display(), fs::metadata(&path).unwrap().len());

    let bundle = AttentionBundle::load(&path).unwrap();
    let img = support::scene(64);
    let stats = assign_keypoints(&PatchGrid::new(64, 64, 8).unwrap(), &detect_keypoints(&img, &SiftParams::default())).unwrap();
    let profile = layer_profile(&bundle, &stats, &AnalysisParams::default()).unwrap();
    for row in &profile.layers {
        let kk = row.theta_kk.map_or("NA".into(), |v| format!("{v:.4}"));
        println!("layer {}: kk {kk} focus {:.4}", row.layer, row.focus_index);
    }
    println!("{}", segment_stages(&profile).unwrap().to_json());
}
