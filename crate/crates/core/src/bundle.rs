//! Attention bundles: every `(layer, head)` attention matrix of one image,
//! stored as a `VSLT` tensor file with entries named `attn/L{layer}/H{head}`
//! and a JSON `meta` entry.
//!
//! This is also the import path for attentions exported from other models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{load_tensor_file, save_tensor_file, Payload, TensorFile, TensorFileError, META_ENTRY};
use crate::vit::{AttentionRecord, ViTConfig};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    File(#[from] TensorFileError),
    #[error("bundle meta: {0}")]
    Meta(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("bundle is missing attention for layer {layer}, head {head}")]
    Missing { layer: usize, head: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub image_size: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub cls_token: bool,
}

impl BundleMeta {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size.max(1)).pow(2)
    }
}

impl From<&ViTConfig> for BundleMeta {
    fn from(cfg: &ViTConfig) -> Self {
        BundleMeta {
            image_size: cfg.image_size,
            patch_size: cfg.patch_size,
            layers: cfg.layers,
            heads: cfg.heads,
            cls_token: cfg.use_cls_token,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub meta: BundleMeta,
    /// Sorted by `(layer, head)`.
    pub records: Vec<AttentionRecord>,
}

pub fn entry_name(layer: usize, head: usize) -> String {
    format!("attn/L{layer}/H{head}")
}

fn parse_entry_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("attn/L")?;
    let (l, h) = rest.split_once("/H")?;
    Some((l.parse().ok()?, h.parse().ok()?))
}

impl AttentionBundle {
    /// Validates completeness and shapes, then sorts records.
    pub fn new(meta: BundleMeta, mut records: Vec<AttentionRecord>) -> Result<Self, BundleError> {
        if meta.patch_size == 0 || !meta.image_size.is_multiple_of(meta.patch_size) {
            return Err(BundleError::Meta(format!(
                "image_size {} is not a multiple of patch_size {}",
                meta.image_size, meta.patch_size
            )));
        }
        records.sort_by_key(|r| (r.layer, r.head));
        let n = meta.num_patches();
        for r in &records {
            let shape = r.alpha.shape();
            if shape.len() != 2 || shape[0] != shape[1] {
                return Err(BundleError::Dimension(format!(
                    "{} has shape {shape:?}, expected a square matrix",
                    entry_name(r.layer, r.head)
                )));
            }
            let t = shape[0];
            if t != n && t != n + 1 {
                return Err(BundleError::Dimension(format!(
                    "{} has T = {t}, expected N = {n} or N + 1",
                    entry_name(r.layer, r.head)
                )));
            }
            if (t == n + 1) != meta.cls_token {
                return Err(BundleError::Dimension(format!(
                    "{} has T = {t} but cls_token = {} (N = {n})",
                    entry_name(r.layer, r.head),
                    meta.cls_token
                )));
            }
            if r.layer >= meta.layers || r.head >= meta.heads {
                return Err(BundleError::Dimension(format!(
                    "{} is outside {} layers x {} heads",
                    entry_name(r.layer, r.head),
                    meta.layers,
                    meta.heads
                )));
            }
        }
        if let Some(w) = records.windows(2).find(|w| (w[0].layer, w[0].head) == (w[1].layer, w[1].head)) {
            return Err(BundleError::Dimension(format!("duplicate {}", entry_name(w[0].layer, w[0].head))));
        }
        // every (layer, head) present exactly once, in order
        for layer in 0..meta.layers {
            for head in 0..meta.heads {
                let idx = layer * meta.heads + head;
                match records.get(idx) {
                    Some(r) if (r.layer, r.head) == (layer, head) => {}
                    _ => return Err(BundleError::Missing { layer, head }),
                }
            }
        }
        Ok(AttentionBundle { meta, records })
    }

    pub fn record(&self, layer: usize, head: usize) -> Option<&AttentionRecord> {
        self.records.get(layer * self.meta.heads + head)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        for r in &self.records {
            f.push_tensor(entry_name(r.layer, r.head), r.alpha.clone());
        }
        f.set_meta(&serde_json::to_string(&self.meta).expect("meta serializes"));
        f
    }

    /// Entries other than `meta` and `attn/L*/H*` are ignored.
    pub fn from_tensor_file(f: &TensorFile) -> Result<Self, BundleError> {
        let meta_bytes = f.meta().ok_or_else(|| BundleError::Meta("missing meta entry".into()))?;
        let meta: BundleMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| BundleError::Meta(e.to_string()))?;
        let mut records = Vec::new();
        for (name, payload) in &f.entries {
            if name == META_ENTRY {
                continue;
            }
            if let (Some((layer, head)), Payload::F32(t)) = (parse_entry_name(name), payload) {
                records.push(AttentionRecord {
                    layer,
                    head,
                    alpha: t.clone(),
                });
            }
        }
        AttentionBundle::new(meta, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        Self::from_tensor_file(&load_tensor_file(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        Ok(save_tensor_file(path, &self.to_tensor_file())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn uniform(layer: usize, head: usize, t: usize) -> AttentionRecord {
        AttentionRecord {
            layer,
            head,
            alpha: Tensor::from_rows(t, t, vec![1.0 / t as f32; t * t]),
        }
    }

    fn meta(cls: bool) -> BundleMeta {
        BundleMeta {
            image_size: 16,
            patch_size: 8,
            layers: 2,
            heads: 2,
            cls_token: cls,
        }
    }

    #[test]
    fn entry_names() {
        assert_eq!(entry_name(3, 12), "attn/L3/H12");
        assert_eq!(parse_entry_name("attn/L3/H12"), Some((3, 12)));
        assert_eq!(parse_entry_name("attn/L3"), None);
    }

    #[test]
    fn round_trip_and_sorting() {
        let recs = vec![uniform(1, 1, 4), uniform(0, 0, 4), uniform(1, 0, 4), uniform(0, 1, 4)];
        let b = AttentionBundle::new(meta(false), recs).unwrap();
        assert_eq!(b.record(1, 0).map(|r| (r.layer, r.head)), Some((1, 0)));
        let back = AttentionBundle::from_tensor_file(
            &TensorFile::from_bytes(&b.to_tensor_file().to_bytes().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn cls_sized_records_need_the_flag() {
        let recs: Vec<_> = (0..4).map(|i| uniform(i / 2, i % 2, 5)).collect();
        assert!(AttentionBundle::new(meta(true), recs.clone()).is_ok());
        assert!(matches!(AttentionBundle::new(meta(false), recs), Err(BundleError::Dimension(_))));
    }

    #[test]
    fn wrong_token_count_is_dimension_error() {
        let recs: Vec<_> = (0..4).map(|i| uniform(i / 2, i % 2, 7)).collect();
        assert!(matches!(AttentionBundle::new(meta(false), recs), Err(BundleError::Dimension(_))));
    }

    #[test]
    fn missing_head_detected() {
        let recs = vec![uniform(0, 0, 4), uniform(0, 1, 4), uniform(1, 1, 4)];
        assert!(matches!(
            AttentionBundle::new(meta(false), recs),
            Err(BundleError::Missing { layer: 1, head: 0 })
        ));
    }
}
