//! A small pre-norm Vision Transformer whose forward pass records every
//! head's softmax attention matrix.
//!
//! Weights are stored `(in, out)` so a linear layer is `x · W + b` on row
//! vectors. Head `h` owns columns `h * d_h .. (h + 1) * d_h` of the query, key
//! and value projections, which is the same as `m` separate projections of
//! width `d_h = d / m`.

pub mod jvp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbImage;
use crate::tensor::{Tensor, TensorFile};

pub const LAYER_NORM_EPS: f32 = 1e-6;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum VitError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite values entering layer {layer}")]
    Numeric { layer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_ratio: f64,
    pub use_cls_token: bool,
}

impl Default for ViTConfig {
    /// Desk-scale model: 64x64 input, 8x8 patches (N = 64), 4 layers of 4 heads.
    fn default() -> Self {
        ViTConfig {
            image_size: 64,
            patch_size: 8,
            layers: 4,
            heads: 4,
            embed_dim: 64,
            mlp_ratio: 4.0,
            use_cls_token: false,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), VitError> {
        let fail = |m: String| Err(VitError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {} is not a multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !(self.mlp_ratio > 0.0) {
            return fail("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    /// Patch count `N`.
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    /// Sequence length `T` (N, plus one with a CLS token).
    pub fn tokens(&self) -> usize {
        self.num_patches() + usize::from(self.use_cls_token)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Tensor,
    /// `(out,)`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    fn random(input: usize, output: usize, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Self {
        Linear {
            weight: random_tensor(vec![input, output], rng, normal),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `x · W + b` for each row of `x`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = matmul(x, &self.weight);
        let b = self.bias.data();
        for row in out.data_mut().chunks_exact_mut(b.len()) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::new(vec![dim], vec![1.0; dim]).expect("dim values"),
            beta: Tensor::zeros(vec![dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(d) {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().enumerate().map(|(c, v)| (v - mean) * inv * g[c] + b[c]));
        }
        Tensor::from_rows(x.rows(), d, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub norm1: LayerNorm,
    pub attention: AttentionWeights,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTWeights {
    /// `(3 P^2, d)`; input rows are patches flattened in `(y, x, channel)` order.
    pub patch_embed: Linear,
    /// `(T, d)`; with a CLS token, row 0 belongs to it.
    pub pos_embed: Tensor,
    pub cls_token: Option<Tensor>,
    pub blocks: Vec<BlockWeights>,
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(shape, data).expect("shape product")
}

impl ViTWeights {
    /// Gaussian (std 0.02) projections and embeddings, zero biases, identity
    /// layer norms. The same `(cfg, seed)` always yields the same weights.
    pub fn seeded(cfg: &ViTConfig, seed: u64) -> Result<Self, VitError> {
        Self::seeded_with_std(cfg, seed, INIT_STD)
    }

    pub fn seeded_with_std(cfg: &ViTConfig, seed: u64, std: f64) -> Result<Self, VitError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| VitError::Config(e.to_string()))?;
        let d = cfg.embed_dim;
        let hidden = cfg.mlp_hidden();
        let patch_embed = Linear::random(cfg.patch_dim(), d, &mut rng, &normal);
        let pos_embed = random_tensor(vec![cfg.tokens(), d], &mut rng, &normal);
        let cls_token = cfg
            .use_cls_token
            .then(|| random_tensor(vec![d], &mut rng, &normal));
        let blocks = (0..cfg.layers)
            .map(|_| BlockWeights {
                norm1: LayerNorm::identity(d),
                attention: AttentionWeights {
                    query: Linear::random(d, d, &mut rng, &normal),
                    key: Linear::random(d, d, &mut rng, &normal),
                    value: Linear::random(d, d, &mut rng, &normal),
                    output: Linear::random(d, d, &mut rng, &normal),
                },
                norm2: LayerNorm::identity(d),
                fc1: Linear::random(d, hidden, &mut rng, &normal),
                fc2: Linear::random(hidden, d, &mut rng, &normal),
            })
            .collect();
        Ok(ViTWeights {
            patch_embed,
            pos_embed,
            cls_token,
            blocks,
        })
    }

    pub fn check(&self, cfg: &ViTConfig) -> Result<(), VitError> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let bad = |what: &str| Err(VitError::Config(format!("weight shape mismatch: {what}")));
        if self.patch_embed.weight.shape() != [cfg.patch_dim(), d] || self.patch_embed.bias.shape() != [d] {
            return bad("patch_embed");
        }
        if self.pos_embed.shape() != [cfg.tokens(), d] {
            return bad("pos_embed");
        }
        if cfg.use_cls_token != self.cls_token.is_some() {
            return bad("cls_token presence");
        }
        if self.blocks.len() != cfg.layers {
            return bad("block count");
        }
        for b in &self.blocks {
            let a = &b.attention;
            for l in [&a.query, &a.key, &a.value, &a.output] {
                if l.weight.shape() != [d, d] || l.bias.shape() != [d] {
                    return bad("attention projection");
                }
            }
            if b.fc1.input_dim() != d || b.fc2.output_dim() != d || b.fc1.output_dim() != b.fc2.input_dim() {
                return bad("mlp");
            }
        }
        Ok(())
    }

    /// Serializes to a [`TensorFile`] with a `meta` entry holding the config.
    pub fn to_tensor_file(&self, cfg: &ViTConfig) -> TensorFile {
        let mut f = TensorFile::new();
        let lin = |f: &mut TensorFile, p: &str, l: &Linear| {
            f.push_tensor(format!("{p}/weight"), l.weight.clone());
            f.push_tensor(format!("{p}/bias"), l.bias.clone());
        };
        let norm = |f: &mut TensorFile, p: &str, n: &LayerNorm| {
            f.push_tensor(format!("{p}/gamma"), n.gamma.clone());
            f.push_tensor(format!("{p}/beta"), n.beta.clone());
        };
        lin(&mut f, "patch_embed", &self.patch_embed);
        f.push_tensor("pos_embed", self.pos_embed.clone());
        if let Some(c) = &self.cls_token {
            f.push_tensor("cls_token", c.clone());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            norm(&mut f, &format!("blocks/{i}/norm1"), &b.norm1);
            lin(&mut f, &format!("blocks/{i}/attn/query"), &b.attention.query);
            lin(&mut f, &format!("blocks/{i}/attn/key"), &b.attention.key);
            lin(&mut f, &format!("blocks/{i}/attn/value"), &b.attention.value);
            lin(&mut f, &format!("blocks/{i}/attn/output"), &b.attention.output);
            norm(&mut f, &format!("blocks/{i}/norm2"), &b.norm2);
            lin(&mut f, &format!("blocks/{i}/fc1"), &b.fc1);
            lin(&mut f, &format!("blocks/{i}/fc2"), &b.fc2);
        }
        f.set_meta(&serde_json::to_string(cfg).expect("config serializes"));
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<(ViTConfig, Self), VitError> {
        let meta = f
            .meta()
            .ok_or_else(|| VitError::Config("weight file has no meta entry".into()))?;
        let cfg: ViTConfig =
            serde_json::from_slice(meta).map_err(|e| VitError::Config(format!("bad meta: {e}")))?;
        let get = |name: String| {
            f.tensor(&name)
                .cloned()
                .ok_or_else(|| VitError::Config(format!("missing tensor {name}")))
        };
        let lin = |p: &str| -> Result<Linear, VitError> {
            Ok(Linear {
                weight: get(format!("{p}/weight"))?,
                bias: get(format!("{p}/bias"))?,
            })
        };
        let norm = |p: &str| -> Result<LayerNorm, VitError> {
            Ok(LayerNorm {
                gamma: get(format!("{p}/gamma"))?,
                beta: get(format!("{p}/beta"))?,
            })
        };
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(BlockWeights {
                norm1: norm(&format!("blocks/{i}/norm1"))?,
                attention: AttentionWeights {
                    query: lin(&format!("blocks/{i}/attn/query"))?,
                    key: lin(&format!("blocks/{i}/attn/key"))?,
                    value: lin(&format!("blocks/{i}/attn/value"))?,
                    output: lin(&format!("blocks/{i}/attn/output"))?,
                },
                norm2: norm(&format!("blocks/{i}/norm2"))?,
                fc1: lin(&format!("blocks/{i}/fc1"))?,
                fc2: lin(&format!("blocks/{i}/fc2"))?,
            });
        }
        let w = ViTWeights {
            patch_embed: lin("patch_embed")?,
            pos_embed: get("pos_embed".into())?,
            cls_token: if cfg.use_cls_token { Some(get("cls_token".into())?) } else { None },
            blocks,
        };
        w.check(&cfg)?;
        Ok((cfg, w))
    }
}

/// One head's `(T, T)` attention matrix; row `i` is the softmax distribution
/// of query token `i` over all keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub alpha: Tensor,
}

impl AttentionRecord {
    pub fn tokens(&self) -> usize {
        self.alpha.rows()
    }

    /// Largest deviation of any row sum from 1, and the smallest entry.
    pub fn row_stats(&self) -> (f32, f32) {
        let t = self.tokens();
        let mut worst = 0.0f32;
        let mut min = f32::INFINITY;
        for row in self.alpha.data().chunks_exact(t) {
            let s: f32 = row.iter().sum();
            worst = worst.max((s - 1.0).abs());
            min = row.iter().copied().fold(min, f32::min);
        }
        (worst, min)
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(k, b.rows(), "inner dimensions");
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_rows(n, m, out)
}

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Flattens each patch in `(y, x, channel)` order, projects it, and adds the
/// patch position embeddings. Returns `(N, d)`.
pub fn patch_embed(img: &RgbImage, cfg: &ViTConfig, weights: &ViTWeights) -> Result<Tensor, VitError> {
    cfg.validate()?;
    if img.width() != cfg.image_size || img.height() != cfg.image_size {
        return Err(VitError::Config(format!(
            "image is {}x{}, model expects {}x{}",
            img.width(),
            img.height(),
            cfg.image_size,
            cfg.image_size
        )));
    }
    if weights.patch_embed.weight.shape() != [cfg.patch_dim(), cfg.embed_dim]
        || weights.pos_embed.shape() != [cfg.tokens(), cfg.embed_dim]
    {
        return Err(VitError::Config("patch embedding weight shapes do not match config".into()));
    }
    let p = cfg.patch_size;
    let per_side = cfg.image_size / p;
    let n = cfg.num_patches();
    let mut flat = Vec::with_capacity(n * cfg.patch_dim());
    for pr in 0..per_side {
        for pc in 0..per_side {
            for y in 0..p {
                for x in 0..p {
                    flat.extend_from_slice(&img.pixel(pc * p + x, pr * p + y));
                }
            }
        }
    }
    let mut out = weights
        .patch_embed
        .forward(&Tensor::from_rows(n, cfg.patch_dim(), flat));
    let offset = usize::from(cfg.use_cls_token);
    let d = cfg.embed_dim;
    let pos = weights.pos_embed.data();
    for (i, row) in out.data_mut().chunks_exact_mut(d).enumerate() {
        let prow = &pos[(i + offset) * d..(i + offset + 1) * d];
        for (v, pv) in row.iter_mut().zip(prow) {
            *v += pv;
        }
    }
    Ok(out)
}

/// Multi-head self-attention over `x` of shape `(T, d)`. Logits are scaled by
/// `1 / sqrt(d / heads)`. Returns the output projection and one record per head.
pub fn mhsa_forward(
    x: &Tensor,
    attn: &AttentionWeights,
    heads: usize,
    layer: usize,
) -> Result<(Tensor, Vec<AttentionRecord>), VitError> {
    if !x.is_finite() {
        return Err(VitError::Numeric { layer });
    }
    let (t, d) = (x.rows(), x.cols());
    if heads == 0 || d % heads != 0 {
        return Err(VitError::Config(format!("embed_dim {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let q = attn.query.forward(x);
    let k = attn.key.forward(x);
    let v = attn.value.forward(x);

    let mut concat = vec![0.0f32; t * d];
    let mut records = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut alpha = vec![0.0f32; t * t];
        for i in 0..t {
            let qi = &q.row(i)[cols.clone()];
            let row = &mut alpha[i * t..(i + 1) * t];
            for (j, slot) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                *slot = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            softmax_in_place(row);
            let out = &mut concat[i * d + h * dh..i * d + (h + 1) * dh];
            for (j, &a) in row.iter().enumerate() {
                for (o, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += a * vv;
                }
            }
        }
        records.push(AttentionRecord {
            layer,
            head: h,
            alpha: Tensor::from_rows(t, t, alpha),
        });
    }
    let out = attn.output.forward(&Tensor::from_rows(t, d, concat));
    Ok((out, records))
}

fn add_in_place(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// `x + MHSA(LN1(x))`, then `h + MLP(LN2(h))`.
pub fn block_forward(
    x: &Tensor,
    block: &BlockWeights,
    heads: usize,
    layer: usize,
) -> Result<(Tensor, Vec<AttentionRecord>), VitError> {
    let (attn_out, records) = mhsa_forward(&block.norm1.forward(x), &block.attention, heads, layer)?;
    let mut h = x.clone();
    add_in_place(&mut h, &attn_out);
    let mut hidden = block.fc1.forward(&block.norm2.forward(&h));
    for v in hidden.data_mut() {
        *v = gelu(*v);
    }
    let mlp = block.fc2.forward(&hidden);
    add_in_place(&mut h, &mlp);
    Ok((h, records))
}

/// Runs a token sequence through every block.
pub fn encode_tokens(
    tokens: Tensor,
    blocks: &[BlockWeights],
    heads: usize,
) -> Result<(Tensor, Vec<AttentionRecord>), VitError> {
    let mut x = tokens;
    let mut all = Vec::with_capacity(blocks.len() * heads);
    for (layer, block) in blocks.iter().enumerate() {
        let (next, records) = block_forward(&x, block, heads, layer)?;
        all.extend(records);
        x = next;
    }
    Ok((x, all))
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(T, d)` token states after the last block.
    pub embeddings: Tensor,
    /// `L * m` records in `(layer, head)` order.
    pub records: Vec<AttentionRecord>,
}

pub fn forward_with_attention(
    img: &RgbImage,
    cfg: &ViTConfig,
    weights: &ViTWeights,
) -> Result<ForwardOutput, VitError> {
    weights.check(cfg)?;
    let patches = patch_embed(img, cfg, weights)?;
    let tokens = match &weights.cls_token {
        Some(cls) => {
            let d = cfg.embed_dim;
            let mut data = Vec::with_capacity(cfg.tokens() * d);
            data.extend(cls.data().iter().zip(weights.pos_embed.row(0)).map(|(c, p)| c + p));
            data.extend_from_slice(patches.data());
            Tensor::from_rows(cfg.tokens(), d, data)
        }
        None => patches,
    };
    let (embeddings, records) = encode_tokens(tokens, &weights.blocks, cfg.heads)?;
    Ok(ForwardOutput { embeddings, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ViTConfig {
        ViTConfig {
            image_size: 8,
            patch_size: 4,
            layers: 2,
            heads: 2,
            embed_dim: 8,
            mlp_ratio: 2.0,
            use_cls_token: false,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ViTConfig::default().validate().is_ok());
        let bad = ViTConfig { embed_dim: 10, heads: 4, ..ViTConfig::default() };
        assert!(matches!(bad.validate(), Err(VitError::Config(_))));
        let bad = ViTConfig { image_size: 60, ..ViTConfig::default() };
        assert!(bad.validate().is_err());
        let c = ViTConfig { use_cls_token: true, ..ViTConfig::default() };
        assert_eq!((c.num_patches(), c.tokens()), (64, 65));
    }

    #[test]
    fn zero_image_embeds_to_position_embeddings() {
        let cfg = tiny_cfg();
        let w = ViTWeights::seeded(&cfg, 3).unwrap();
        let e = patch_embed(&RgbImage::new(8, 8), &cfg, &w).unwrap();
        assert_eq!(e, w.pos_embed);
    }

    #[test]
    fn identity_projection_passes_pixels_through() {
        let cfg = ViTConfig {
            image_size: 2,
            patch_size: 2,
            layers: 0,
            heads: 1,
            embed_dim: 12,
            mlp_ratio: 1.0,
            use_cls_token: false,
        };
        let mut w = ViTWeights::seeded(&cfg, 0).unwrap();
        let mut eye = vec![0.0; 144];
        for i in 0..12 {
            eye[i * 12 + i] = 1.0;
        }
        w.patch_embed.weight = Tensor::from_rows(12, 12, eye);
        w.pos_embed = Tensor::zeros(vec![1, 12]);
        let px: Vec<f32> = (0..12).map(|v| v as f32 / 12.0).collect();
        let img = RgbImage::from_vec(2, 2, px.clone()).unwrap();
        assert_eq!(patch_embed(&img, &cfg, &w).unwrap().data(), &px[..]);
    }

    #[test]
    fn wrong_image_size_is_config_error() {
        let cfg = tiny_cfg();
        let w = ViTWeights::seeded(&cfg, 0).unwrap();
        assert!(matches!(patch_embed(&RgbImage::new(9, 8), &cfg, &w), Err(VitError::Config(_))));
    }

    #[test]
    fn equal_keys_give_uniform_attention() {
        let d = 4;
        let attn = AttentionWeights {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        };
        let x = Tensor::from_rows(5, d, (0..20).map(|v| v as f32).collect());
        let (_, recs) = mhsa_forward(&x, &attn, 2, 0).unwrap();
        for r in recs {
            assert!(r.alpha.data().iter().all(|&a| (a - 0.2).abs() < 1e-7));
        }
    }

    #[test]
    fn saturated_softmax() {
        let mut row = [80.0f32, -80.0];
        softmax_in_place(&mut row);
        assert!((row[0] - 1.0).abs() < 1e-7 && row[1] < 1e-30);
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let cfg = tiny_cfg();
        let w = ViTWeights::seeded(&cfg, 0).unwrap();
        let mut x = Tensor::zeros(vec![4, 8]);
        x.data_mut()[3] = f32::NAN;
        assert_eq!(
            mhsa_forward(&x, &w.blocks[1].attention, 2, 1).unwrap_err(),
            VitError::Numeric { layer: 1 }
        );
    }

    #[test]
    fn empty_stack_returns_embeddings() {
        let cfg = ViTConfig { layers: 0, ..tiny_cfg() };
        let w = ViTWeights::seeded(&cfg, 1).unwrap();
        let img = RgbImage::from_vec(8, 8, (0..192).map(|v| (v % 7) as f32 / 7.0).collect()).unwrap();
        let out = forward_with_attention(&img, &cfg, &w).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.embeddings, patch_embed(&img, &cfg, &w).unwrap());
    }

    #[test]
    fn records_in_layer_head_order_and_normalized() {
        let cfg = ViTConfig { use_cls_token: true, ..tiny_cfg() };
        let w = ViTWeights::seeded_with_std(&cfg, 9, 0.5).unwrap();
        let img = RgbImage::from_vec(8, 8, (0..192).map(|v| (v % 11) as f32 / 11.0).collect()).unwrap();
        let out = forward_with_attention(&img, &cfg, &w).unwrap();
        let order: Vec<_> = out.records.iter().map(|r| (r.layer, r.head)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        for r in &out.records {
            assert_eq!(r.alpha.shape(), &[5, 5]);
            let (dev, min) = r.row_stats();
            assert!(dev < 1e-5 && min >= 0.0);
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = ViTConfig::default();
        let img = RgbImage::from_vec(64, 64, (0..64 * 64 * 3).map(|v| (v % 13) as f32 / 13.0).collect()).unwrap();
        let a = forward_with_attention(&img, &cfg, &ViTWeights::seeded(&cfg, 42).unwrap()).unwrap();
        let b = forward_with_attention(&img, &cfg, &ViTWeights::seeded(&cfg, 42).unwrap()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.embeddings, b.embeddings);
        let c = ViTWeights::seeded(&cfg, 43).unwrap();
        assert_ne!(c, ViTWeights::seeded(&cfg, 42).unwrap());
    }

    #[test]
    fn weights_round_trip_through_tensor_file() {
        let cfg = ViTConfig { use_cls_token: true, ..tiny_cfg() };
        let w = ViTWeights::seeded(&cfg, 5).unwrap();
        let f = TensorFile::from_bytes(&w.to_tensor_file(&cfg).to_bytes().unwrap()).unwrap();
        let (cfg2, w2) = ViTWeights::from_tensor_file(&f).unwrap();
        assert_eq!((cfg2, w2), (cfg, w));
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!((gelu(-1.0) + 0.158_808).abs() < 1e-5);
    }
}
