//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code; the oracles read only weight
//! tensors and plain values.

#![allow(dead_code)]

use keypoint_attention::image::GrayImage;
use keypoint_attention::tensor::Tensor;
use keypoint_attention::vit::{AttentionWeights, BlockWeights, LayerNorm, Linear};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept local so the oracle inputs do not depend on rand_distr
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (normal(rng) * std) as f32).collect()).unwrap()
}

pub fn random_linear(rng: &mut ChaCha8Rng, input: usize, output: usize, std: f64) -> Linear {
    Linear {
        weight: random_tensor(rng, vec![input, output], std),
        bias: random_tensor(rng, vec![output], std),
    }
}

pub fn random_norm(rng: &mut ChaCha8Rng, d: usize) -> LayerNorm {
    LayerNorm {
        gamma: Tensor::new(vec![d], (0..d).map(|_| (1.0 + 0.2 * normal(rng)) as f32).collect()).unwrap(),
        beta: random_tensor(rng, vec![d], 0.1),
    }
}

pub fn random_attention(rng: &mut ChaCha8Rng, d: usize, std: f64) -> AttentionWeights {
    AttentionWeights {
        query: random_linear(rng, d, d, std),
        key: random_linear(rng, d, d, std),
        value: random_linear(rng, d, d, std),
        output: random_linear(rng, d, d, std),
    }
}

pub fn random_block(rng: &mut ChaCha8Rng, d: usize, hidden: usize, std: f64) -> BlockWeights {
    BlockWeights {
        norm1: random_norm(rng, d),
        attention: random_attention(rng, d, std),
        norm2: random_norm(rng, d),
        fc1: random_linear(rng, d, hidden, std),
        fc2: random_linear(rng, hidden, d, std),
    }
}

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect()
}

fn w(t: &Tensor, i: usize, j: usize) -> f64 {
    t.data()[i * t.shape()[1] + j] as f64
}

pub fn linear(x: &Mat, l: &Linear) -> Mat {
    let (din, dout) = (l.weight.shape()[0], l.weight.shape()[1]);
    x.iter()
        .map(|row| {
            (0..dout)
                .map(|o| l.bias.data()[o] as f64 + (0..din).map(|i| row[i] * w(&l.weight, i, o)).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, ln: &LayerNorm) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + 1e-6).sqrt() * ln.gamma.data()[c] as f64 + ln.beta.data()[c] as f64)
                .collect()
        })
        .collect()
}

/// Multi-head attention written as explicit per-head loops. Returns the
/// projected output and `alpha[h][i][j]`.
pub fn mhsa(x: &Mat, a: &AttentionWeights, heads: usize) -> (Mat, Vec<Mat>) {
    let t = x.len();
    let d = x[0].len();
    let dh = d / heads;
    let q = linear(x, &a.query);
    let k = linear(x, &a.key);
    let v = linear(x, &a.value);
    let mut concat = vec![vec![0.0; d]; t];
    let mut alphas = Vec::new();
    for h in 0..heads {
        let mut alpha = vec![vec![0.0; t]; t];
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..t {
                alpha[i][j] = e[j] / z;
            }
            for c in 0..dh {
                concat[i][h * dh + c] = (0..t).map(|j| alpha[i][j] * v[j][h * dh + c]).sum();
            }
        }
        alphas.push(alpha);
    }
    (linear(&concat, &a.output), alphas)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn block(x: &Mat, b: &BlockWeights, heads: usize) -> Mat {
    let (att, _) = mhsa(&layer_norm(x, &b.norm1), &b.attention, heads);
    let h: Mat = x.iter().zip(&att).map(|(r, a)| r.iter().zip(a).map(|(u, v)| u + v).collect()).collect();
    let hidden: Mat = linear(&layer_norm(&h, &b.norm2), &b.fc1)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let mlp = linear(&hidden, &b.fc2);
    h.iter().zip(&mlp).map(|(r, m)| r.iter().zip(m).map(|(u, v)| u + v).collect()).collect()
}

/// Scores computed straight from the definitions, without the library.
#[derive(Debug, Clone)]
pub struct BruteScores {
    /// `None` when the attended set is empty.
    pub weighted: Vec<Option<f64>>,
    pub unweighted: Vec<Option<f64>>,
    pub kk: Option<f64>,
    pub kn: Option<f64>,
    pub nk: Option<f64>,
    pub nn: Option<f64>,
    pub undefined: usize,
}

pub fn brute_scores(alpha: &Mat, t: &[u32], gamma: f64, weighted_globals: bool) -> BruteScores {
    let n = alpha.len();
    let mut weighted = Vec::new();
    let mut unweighted = Vec::new();
    for row in alpha {
        let mut total = 0.0;
        for v in row {
            total += v;
        }
        let line = gamma * total / n as f64;
        let (mut key_w, mut key_u, mut non) = (0.0, 0.0, 0.0);
        let mut any = false;
        for j in 0..n {
            if row[j] >= line {
                any = true;
                if t[j] > 0 {
                    key_w += t[j] as f64;
                    key_u += 1.0;
                } else {
                    non += 1.0;
                }
            }
        }
        weighted.push(any.then(|| key_w / (non + key_w)));
        unweighted.push(any.then(|| key_u / (non + key_u)));
    }
    let used = if weighted_globals { &weighted } else { &unweighted };
    let avg = |pick_key: bool, complement: bool| {
        let vals: Vec<f64> = (0..n)
            .filter(|&i| (t[i] > 0) == pick_key)
            .filter_map(|i| used[i])
            .map(|v| if complement { 1.0 - v } else { v })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    BruteScores {
        kk: avg(true, false),
        kn: avg(true, true),
        nk: avg(false, false),
        nn: avg(false, true),
        undefined: weighted.iter().filter(|v| v.is_none()).count(),
        weighted,
        unweighted,
    }
}

/// Min-max normalize, renormalize, Shannon entropy; constant rows get `ln N`.
pub fn entropy(row: &[f64]) -> f64 {
    let mut lo = row[0];
    let mut hi = row[0];
    for &v in row {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi == lo {
        return (row.len() as f64).ln();
    }
    let scaled: Vec<f64> = row.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let z: f64 = scaled.iter().sum();
    let mut h = 0.0;
    for s in scaled {
        if s > 0.0 {
            h -= (s / z) * (s / z).ln();
        }
    }
    h
}

/// Full 2-D convolution with a normalized `exp(-r^2 / 2 sigma^2)` kernel of
/// radius `ceil(4 sigma)` and clamp-to-edge borders.
pub fn dense_blur(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let mut kernel = Vec::new();
    let mut z = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push((dx, dy, v));
            z += v;
        }
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dx, dy, k) in &kernel {
                let xx = (x + dx).clamp(0, w - 1) as usize;
                let yy = (y + dy).clamp(0, h - 1) as usize;
                acc += k * img.get(xx, yy) as f64;
            }
            out.push(acc / z);
        }
    }
    out
}

pub fn blob(size: usize, cx: f64, cy: f64, sigma: f64) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        (0.1 + 0.8 * (-r2 / (2.0 * sigma * sigma)).exp()) as f32
    })
}

/// Smooth background plus scattered bright and dark blobs, values in `[0, 1]`.
pub fn textured(size: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let count = size / 4;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let m = size as f64;
            (
                rng.random_range(0.08 * m..0.92 * m),
                rng.random_range(0.08 * m..0.92 * m),
                rng.random_range(1.5..4.5),
                if rng.random_bool(0.5) { 0.3 } else { -0.3 },
            )
        })
        .collect();
    GrayImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.5 + 0.12 * (xf / 5.0).sin() * (yf / 7.0).cos();
        for &(cx, cy, s, a) in &blobs {
            v += a * (-((xf - cx).powi(2) + (yf - cy).powi(2)) / (2.0 * s * s)).exp();
        }
        v as f32
    })
}

/// Where pixel `(x, y)` lands after [`GrayImage::rotate90`] of an image of
/// height `h`.
pub fn rotate_point(x: f64, y: f64, h: usize) -> (f64, f64) {
    (h as f64 - 1.0 - y, x)
}

/// Fraction of `from` points with a partner in `to` within `tol`.
pub fn matched_fraction(from: &[(f64, f64)], to: &[(f64, f64)], tol: f64) -> f64 {
    if from.is_empty() {
        return 1.0;
    }
    let hits = from
        .iter()
        .filter(|a| to.iter().any(|b| (a.0 - b.0).hypot(a.1 - b.1) <= tol))
        .count();
    hits as f64 / from.len() as f64
}

/// Random row-stochastic matrix; some rows are quantized so attention
/// values tie with the detection line.
pub fn random_attention_matrix(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    (0..n)
        .map(|_| {
            let kind = rng.random_range(0..4);
            let raw: Vec<f64> = match kind {
                0 => vec![1.0; n],
                1 => (0..n).map(|_| rng.random_range(0..4) as f64).collect(),
                _ => (0..n).map(|_| (2.0 * normal(rng)).exp()).collect(),
            };
            let z: f64 = raw.iter().sum();
            if z == 0.0 {
                vec![1.0 / n as f64; n]
            } else {
                raw.iter().map(|v| v / z).collect()
            }
        })
        .collect()
}
