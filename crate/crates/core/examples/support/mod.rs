use keypoint_attention::image::{GrayImage, RgbImage};

/// A few blobs and a bright bar over a faint gradient: enough structure for
/// SIFT to fire on some patches and leave others empty.
#[allow(dead_code)]
pub fn scene(size: usize) -> GrayImage {
    let s = size as f32;
    let blobs: Vec<(f32, f32, f32, f32)> = (0..14u32)
        .map(|k| {
            let h = |m: u32| ((k.wrapping_mul(2_654_435_761).wrapping_add(m * 40_503) >> 8) % 1000) as f32 / 1000.0;
            let amp = if k % 3 == 0 { -0.5 } else { 0.7 };
            (0.08 + 0.84 * h(1), 0.08 + 0.84 * h(2), 0.025 + 0.04 * h(3), amp)
        })
        .collect();
    GrayImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / s, y as f32 / s);
        let mut val = 0.3 + 0.1 * u;
        for &(cx, cy, r, amp) in &blobs {
            let d2 = (u - cx).powi(2) + (v - cy).powi(2);
            val += amp * (-d2 / (2.0 * r * r)).exp();
        }
        if (0.85..0.9).contains(&u) && (0.1..0.5).contains(&v) {
            val += 0.4;
        }
        val.clamp(0.0, 1.0)
    })
}

#[allow(dead_code)]
pub fn scene_rgb(size: usize) -> RgbImage {
    RgbImage::from_gray(&scene(size))
}

/// Small dots on a jittered lattice; fires keypoints in many patches.
#[allow(dead_code)]
pub fn dotted(size: usize) -> GrayImage {
    let step = 11.0f32;
    GrayImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f32 / step, y as f32 / step);
        let (cx, cy) = (fx.floor(), fy.floor());
        let k = (cx as u32).wrapping_mul(73_856_093) ^ (cy as u32).wrapping_mul(19_349_663);
        let jitter = |m: u32| ((k.wrapping_mul(m) >> 16) % 100) as f32 / 100.0 * 0.4 + 0.3;
        let (dx, dy) = (fx - cx - jitter(2_654_435_761), fy - cy - jitter(40_503));
        let amp = if k.is_multiple_of(2) { 0.45 } else { -0.35 };
        (0.5 + amp * (-(dx * dx + dy * dy) * step * step / 8.0).exp()).clamp(0.0, 1.0)
    })
}
