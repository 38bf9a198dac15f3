//! Assigns keypoints to an 8x8 patch grid and draws the identity map.

mod support;

use keypoint_attention::patch::{assign_keypoints, split_identity_sets, PatchGrid};
use keypoint_attention::sift::{detect_keypoints, SiftParams};

fn main() {
    let img = support::scene(64);
    let kps = detect_keypoints(&img, &SiftParams::default());
    let grid = PatchGrid::new(64, 64, 8).unwrap();
    let stats = assign_keypoints(&grid, &kps).unwrap();
    let (keys, non) = split_identity_sets(&stats);
    println!("{} keypoints over {} patches: {} keypoint, {} non-keypoint", kps.len(), grid.len(), keys.len(), non.len());

    let cols = grid.cols;
    for (j, &t) in stats.counts().iter().enumerate() {
        let cell = if t == 0 { ".".to_string() } else { t.to_string() };
        print!("{cell:>3}");
        if (j + 1) % cols == 0 {
            println!();
        }
    }
    println!("\n{}", stats.to_csv(&grid).lines().take(4).collect::<Vec<_>>().join("\n"));
}
