//! Splits a layer profile into retrieval, capture and coach stages.

use keypoint_attention::analysis::{segment_series, Stage};

fn show(name: &str, kk: &[f64], focus: &[f64]) {
    let seg = segment_series(kk, focus).unwrap();
    let stages: String = (0..kk.len())
        .map(|l| match seg.stage_of(l) {
            Stage::Retrieval => 'R',
            Stage::Capture => 'C',
            Stage::Coach => 'K',
        })
        .collect();
    println!("{name:<10} {} {stages}", seg.to_json());
}

fn main() {
    let layers = 12;
    let kk: Vec<f64> = (0..layers).map(|l| 0.3 + 0.4 * (-((l as f64 - 5.0) / 2.5).powi(2)).exp()).collect();
    let focus: Vec<f64> = (0..layers).map(|l| 3.5 - 1.2 * (-((l as f64 - 5.0) / 3.0).powi(2)).exp()).collect();
    show("peaked", &kk, &focus);
    show("flat", &vec![0.4; layers], &vec![3.0; layers]);
    let rising: Vec<f64> = (0..layers).map(|l| l as f64 / layers as f64).collect();
    let falling: Vec<f64> = rising.iter().map(|v| 4.0 - v).collect();
    show("monotone", &rising, &falling);
}
