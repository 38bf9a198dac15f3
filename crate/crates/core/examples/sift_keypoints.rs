//! Detects DoG keypoints on a synthetic scene and prints them as TSV.

mod support;

use keypoint_attention::sift::{build_dog, build_scale_space, detect_extrema, detect_keypoints, keypoints_to_tsv, SiftParams};

fn main() {
    let img = support::scene(128);
    let params = SiftParams::default();

    let ss = build_scale_space(&img, &params);
    for o in &ss.octaves {
        println!("octave {:>2}: {} levels, sigmas {:.3?}", o.exponent, o.levels.len(), o.sigmas);
    }
    let dog = build_dog(&ss);
    let sites = detect_extrema(&dog);
    let kps = detect_keypoints(&img, &params);
    println!("{} raw extrema, {} keypoints after refinement and filtering", sites.len(), kps.len());
    print!("x\ty\tsigma\tresponse\n{}", keypoints_to_tsv(&kps));

    for t in [0.01, 0.03, 0.08] {
        let n = detect_keypoints(&img, &SiftParams { contrast_threshold: t, ..params.clone() }).len();
        println!("contrast threshold {t}: {n} keypoints");
    }
}
