//! Builds top, bottom, guided and random masks on the same image and writes
//! the masked versions as PNG files to the system temp directory.

mod support;

use std::fs;

use keypoint_attention::image::encode_png_rgb;
use keypoint_attention::masking::{apply_mask, guided_mask, random_mask, rank_mask, Fill, MaskMode};
use keypoint_attention::report::{cmd_analyze, RunConfig};

fn main() {
    let dir = std::env::temp_dir().join("kpattn-mask-example");
    fs::create_dir_all(&dir).unwrap();
    let input = dir.join("scene.png");
    fs::write(&input, encode_png_rgb(&support::scene_rgb(64))).unwrap();

    let analyzed = cmd_analyze(&RunConfig::new(&input, dir.join("analysis"))).unwrap();
    let p = &analyzed.prepared;
    let r = 0.4;
    let plans = [
        rank_mask(&analyzed.mean_theta, r, MaskMode::Top).unwrap(),
        rank_mask(&analyzed.mean_theta, r, MaskMode::Bottom).unwrap(),
        guided_mask(&p.stats, r, 0.5, 3).unwrap(),
        random_mask(p.grid.len(), r, 3).unwrap(),
    ];
    for plan in &plans {
        let keys = plan.masked.iter().filter(|&&j| p.stats.is_keypoint(j)).count();
        let path = dir.join(format!("masked_{}.png", plan.mode));
        let masked = apply_mask(&p.image, plan, &p.grid, Fill::Mean).unwrap();
        fs::write(&path, encode_png_rgb(&masked)).unwrap();
        println!("{:<7} {} patches, {keys} on keypoints -> {}", plan.mode.to_string(), plan.len(), path.display());
    }
    println!("{}", plans[2].to_json());
}
