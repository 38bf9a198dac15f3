//! Forward-mode tangent propagation through a single transformer block.
//!
//! Used as a probe of the forward kernels: the Jacobian-vector product
//! computed here in `f64` must agree with central finite differences of
//! [`block_forward`](super::block_forward).

use super::{BlockWeights, LayerNorm, Linear, LAYER_NORM_EPS};
use crate::tensor::Tensor;

/// Row-major `f64` matrix with a value and tangent.
#[derive(Debug, Clone)]
struct Dual {
    rows: usize,
    cols: usize,
    v: Vec<f64>,
    t: Vec<f64>,
}

impl Dual {
    fn from_tensors(x: &Tensor, dx: &Tensor) -> Self {
        Dual {
            rows: x.rows(),
            cols: x.cols(),
            v: x.data().iter().map(|&a| a as f64).collect(),
            t: dx.data().iter().map(|&a| a as f64).collect(),
        }
    }

    fn add(&self, other: &Dual) -> Dual {
        Dual {
            rows: self.rows,
            cols: self.cols,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect(),
            t: self.t.iter().zip(&other.t).map(|(a, b)| a + b).collect(),
        }
    }
}

fn linear(x: &Dual, l: &Linear) -> Dual {
    let (n, k, m) = (x.rows, x.cols, l.output_dim());
    let w = l.weight.data();
    let b = l.bias.data();
    let mut v = vec![0.0; n * m];
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let (mut sv, mut st) = (b[j] as f64, 0.0);
            for p in 0..k {
                let wp = w[p * m + j] as f64;
                sv += x.v[i * k + p] * wp;
                st += x.t[i * k + p] * wp;
            }
            v[i * m + j] = sv;
            t[i * m + j] = st;
        }
    }
    Dual { rows: n, cols: m, v, t }
}

fn layer_norm(x: &Dual, ln: &LayerNorm) -> Dual {
    let d = x.cols;
    let (g, b) = (ln.gamma.data(), ln.beta.data());
    let eps = LAYER_NORM_EPS as f64;
    let mut out = x.clone();
    for r in 0..x.rows {
        let xv = &x.v[r * d..(r + 1) * d];
        let xt = &x.t[r * d..(r + 1) * d];
        let mean = xv.iter().sum::<f64>() / d as f64;
        let dmean = xt.iter().sum::<f64>() / d as f64;
        let var = xv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / d as f64;
        let dvar = 2.0 * xv.iter().zip(xt).map(|(a, da)| (a - mean) * (da - dmean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let dinv = -0.5 * (var + eps).powf(-1.5) * dvar;
        for c in 0..d {
            let xc = xv[c] - mean;
            let dxc = xt[c] - dmean;
            out.v[r * d + c] = xc * inv * g[c] as f64 + b[c] as f64;
            out.t[r * d + c] = (dxc * inv + xc * dinv) * g[c] as f64;
        }
    }
    out
}

fn gelu(x: &Dual) -> Dual {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let mut out = x.clone();
    for (v, t) in out.v.iter_mut().zip(out.t.iter_mut()) {
        let a = *v;
        let u = C * (a + 0.044715 * a * a * a);
        let th = u.tanh();
        let du = C * (1.0 + 3.0 * 0.044715 * a * a);
        *v = 0.5 * a * (1.0 + th);
        *t *= 0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du;
    }
    out
}

fn attention(x: &Dual, block: &BlockWeights, heads: usize) -> Dual {
    let a = &block.attention;
    let (q, k, v) = (linear(x, &a.query), linear(x, &a.key), linear(x, &a.value));
    let (t, d) = (x.rows, x.cols);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ov = vec![0.0; t * d];
    let mut ot = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let mut logit = vec![0.0; t];
            let mut dlogit = vec![0.0; t];
            for j in 0..t {
                let (mut s, mut ds) = (0.0, 0.0);
                for c in 0..dh {
                    let (qi, ki) = (i * d + off + c, j * d + off + c);
                    s += q.v[qi] * k.v[ki];
                    ds += q.t[qi] * k.v[ki] + q.v[qi] * k.t[ki];
                }
                logit[j] = s * scale;
                dlogit[j] = ds * scale;
            }
            let max = logit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logit.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let alpha: Vec<f64> = e.iter().map(|x| x / z).collect();
            let mean_dl: f64 = alpha.iter().zip(&dlogit).map(|(p, dl)| p * dl).sum();
            for j in 0..t {
                let dalpha = alpha[j] * (dlogit[j] - mean_dl);
                for c in 0..dh {
                    let (oi, vi) = (i * d + off + c, j * d + off + c);
                    ov[oi] += alpha[j] * v.v[vi];
                    ot[oi] += dalpha * v.v[vi] + alpha[j] * v.t[vi];
                }
            }
        }
    }
    linear(&Dual { rows: t, cols: d, v: ov, t: ot }, &a.output)
}

/// Block output and its directional derivative along `direction`, both
/// `(T, d)`.
pub fn block_jvp(x: &Tensor, direction: &Tensor, block: &BlockWeights, heads: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(x.shape(), direction.shape(), "direction must match input shape");
    let x = Dual::from_tensors(x, direction);
    let h = x.add(&attention(&layer_norm(&x, &block.norm1), block, heads));
    let mlp = linear(&gelu(&linear(&layer_norm(&h, &block.norm2), &block.fc1)), &block.fc2);
    let y = h.add(&mlp);
    (y.v, y.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{block_forward, ViTConfig, ViTWeights};

    #[test]
    fn primal_matches_f32_forward() {
        let cfg = ViTConfig {
            image_size: 4,
            patch_size: 2,
            layers: 1,
            heads: 2,
            embed_dim: 8,
            mlp_ratio: 2.0,
            use_cls_token: false,
        };
        let w = ViTWeights::seeded_with_std(&cfg, 11, 0.4).unwrap();
        let x = Tensor::from_rows(4, 8, (0..32).map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0).collect());
        let (y, _) = block_forward(&x, &w.blocks[0], 2, 0).unwrap();
        let (yv, _) = block_jvp(&x, &Tensor::zeros(vec![4, 8]), &w.blocks[0], 2);
        for (a, b) in y.data().iter().zip(&yv) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }
}
