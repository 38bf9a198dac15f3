//! Runs the seeded ViT on a synthetic image and summarizes the captured
//! attention of every head.

mod support;

use keypoint_attention::vit::{forward_with_attention, ViTConfig, ViTWeights};

fn main() {
    let cfg = ViTConfig::default();
    let weights = ViTWeights::seeded(&cfg, 7).unwrap();
    let out = forward_with_attention(&support::scene_rgb(cfg.image_size), &cfg, &weights).unwrap();
    println!(
        "{} tokens, dim {}, {} records",
        out.embeddings.rows(),
        out.embeddings.cols(),
        out.records.len()
    );
    for rec in &out.records {
        let (deviation, min) = rec.row_stats();
        let peak = rec.alpha.data().iter().cloned().fold(0.0f32, f32::max);
        println!(
            "L{} H{}: T = {}, row sum error {deviation:.1e}, weights in [{min:.5}, {peak:.5}]",
            rec.layer,
            rec.head,
            rec.tokens()
        );
    }

    let cls = ViTConfig { use_cls_token: true, ..cfg };
    let w = ViTWeights::seeded(&cls, 7).unwrap();
    let out = forward_with_attention(&support::scene_rgb(64), &cls, &w).unwrap();
    println!("with a class token: T = {}", out.records[0].tokens());
}
