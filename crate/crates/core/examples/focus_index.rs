//! Entropy-based focus of attention rows, from fully uniform to one-hot.

use keypoint_attention::analysis::{focus_index, row_entropy, PatchAttention};

fn main() {
    let n = 16;
    for sharpness in [0.0, 0.5, 2.0, 8.0, 32.0] {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| (-sharpness * ((i as f64 - j as f64) / n as f64).powi(2)).exp()).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / s));
        }
        let alpha = PatchAttention::new(n, data).unwrap();
        let f = focus_index(&alpha);
        println!("sharpness {sharpness:>4}: focus {:.4} (ln N = {:.4})", f.delta, (n as f64).ln());
    }
    let mut one_hot = vec![0.0; n];
    one_hot[3] = 1.0;
    println!("one-hot row entropy {:.4}", row_entropy(&one_hot).abs());
}
