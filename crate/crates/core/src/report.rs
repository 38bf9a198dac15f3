//! End-to-end runs that write report artifacts to an output directory.
//!
//! | command    | artifacts |
//! |------------|-----------|
//! | `sift`     | `keypoints.tsv`, `overlay.pgm` |
//! | `analyze`  | `keypoints.tsv`, `patch_stats.csv`, `profile.csv`, `layers.csv`, `mean_theta.csv`, `stages.json`, `heatmaps/L{l}_H{h}.pgm`, plus `attention.vslt` for the built-in model |
//! | `mask`     | `mask_plan.json`, `masked.png` or `masked.ppm` (same format as the input) |
//! | `schedule` | `schedule.csv`, `plans.jsonl` |
//!
//! Every artifact is a pure function of the inputs and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{layer_profile, segment_stages, AnalysisError, AnalysisParams, LayerProfile, PatchAttention, StageSegmentation};
use crate::bundle::{AttentionBundle, BundleError, BundleMeta};
use crate::image::{
    encode_pgm, encode_png_rgb, encode_ppm, fit_to_resolution, load_image, to_grayscale, GrayImage, ImageError, RgbImage,
};
use crate::masking::{
    apply_mask, guided_mask, random_mask, rank_mask, schedule_masks, CurriculumSchedule, Fill, MaskError, MaskMode,
    MaskPlan,
};
use crate::patch::{assign_keypoints, GridError, PatchGrid, PatchStats};
use crate::sift::{detect_keypoints, keypoints_to_tsv, Keypoint, SiftParams};
use crate::tensor::TensorFileError;
use crate::vit::{forward_with_attention, VitError, ViTConfig, ViTWeights};

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Vit(#[from] VitError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl Error {
    /// 2 configuration, 3 input format, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mask(_) | Error::Grid(_) => 2,
            Error::Numeric(_) => 4,
            Error::Io { .. } => 1,
            Error::Image(e) => match e {
                ImageError::Io { .. } => 1,
                ImageError::Decode { .. } => 3,
                ImageError::Param(_) => 2,
            },
            Error::Bundle(e) => match e {
                BundleError::File(TensorFileError::Io { .. }) => 1,
                _ => 3,
            },
            Error::Analysis(e) => match e {
                AnalysisError::Param(_) | AnalysisError::NotApplicable(_) => 2,
                _ => 3,
            },
            Error::Vit(e) => match e {
                VitError::Config(_) => 2,
                VitError::Numeric { .. } => 4,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Seeded built-in ViT.
    Internal { config: ViTConfig, seed: u64 },
    /// Attention bundle file (`VSLT`).
    Bundle(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSettings {
    pub mode: MaskMode,
    pub ratio: f64,
    pub beta: f64,
    pub fill: Fill,
    /// Layers whose heads feed the Top/Bottom ranking; `None` is all layers.
    pub theta_layers: Option<Vec<usize>>,
}

impl Default for MaskSettings {
    fn default() -> Self {
        MaskSettings {
            mode: MaskMode::Guided,
            ratio: 0.5,
            beta: 0.5,
            fill: Fill::Mean,
            theta_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image: PathBuf,
    pub model: Option<ModelSource>,
    /// Grid patch size when there is no model; a model brings its own.
    pub patch_size: usize,
    pub sift: SiftParams,
    pub analysis: AnalysisParams,
    pub mask: MaskSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(image: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            image: image.into(),
            model: Some(ModelSource::Internal {
                config: ViTConfig::default(),
                seed: 0,
            }),
            patch_size: ViTConfig::default().patch_size,
            sift: SiftParams::default(),
            analysis: AnalysisParams::default(),
            mask: MaskSettings::default(),
            out_dir: out_dir.into(),
            seed: 0,
        }
    }
}

/// Image, keypoints and patch statistics at the resolution the attention
/// refers to.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: RgbImage,
    pub gray: GrayImage,
    pub keypoints: Vec<Keypoint>,
    pub grid: PatchGrid,
    pub stats: PatchStats,
    pub bundle: Option<AttentionBundle>,
    /// True when the attention came from the built-in model.
    pub internal: bool,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn check_sift(params: &SiftParams) -> Result<(), Error> {
    params.validate().map_err(Error::Config)
}

/// Loads and fits the image, runs SIFT, and produces attention from the
/// configured source (if any).
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, Error> {
    check_sift(&cfg.sift)?;
    cfg.analysis.validate()?;
    let raw = load_image(&cfg.image)?;
    let (image, patch_size, bundle, internal) = match &cfg.model {
        Some(ModelSource::Internal { config, seed }) => {
            config.validate()?;
            let image = fit_to_resolution(&raw, config.image_size, config.image_size)?;
            let weights = ViTWeights::seeded(config, *seed)?;
            let out = forward_with_attention(&image, config, &weights)?;
            let bundle = AttentionBundle::new(BundleMeta::from(config), out.records)?;
            (image, config.patch_size, Some(bundle), true)
        }
        Some(ModelSource::Bundle(path)) => {
            let bundle = AttentionBundle::load(path)?;
            let size = bundle.meta.image_size;
            let image = fit_to_resolution(&raw, size, size)?;
            (image, bundle.meta.patch_size, Some(bundle), false)
        }
        None => (raw, cfg.patch_size, None, false),
    };
    if let Some(b) = &bundle {
        if let Some(r) = b.records.iter().find(|r| !r.alpha.is_finite()) {
            return Err(Error::Numeric(format!(
                "attention for layer {}, head {} contains non-finite values",
                r.layer, r.head
            )));
        }
    }
    let gray = to_grayscale(&image);
    let keypoints = detect_keypoints(&gray, &cfg.sift);
    let grid = PatchGrid::new(image.width(), image.height(), patch_size)?;
    let stats = assign_keypoints(&grid, &keypoints)?;
    Ok(Prepared {
        image,
        gray,
        keypoints,
        grid,
        stats,
        bundle,
        internal,
    })
}

/// Marks each keypoint with a 3x3 cross in a contrasting value; the corners
/// take the opposite value so the whole 3x3 block changes.
pub fn render_overlay(gray: &GrayImage, keypoints: &[Keypoint]) -> GrayImage {
    let mut out = gray.clone();
    for k in keypoints {
        let (cx, cy) = (k.x.round() as isize, k.y.round() as isize);
        let mark = if gray.get_clamped(cx, cy) < 0.5 { 1.0 } else { 0.0 };
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x as usize >= out.width() || y as usize >= out.height() {
                    continue;
                }
                let v = if dx == 0 || dy == 0 { mark } else { 1.0 - mark };
                out.set(x as usize, y as usize, v);
            }
        }
    }
    out
}

/// Attention received by each patch (column mean), min-max scaled to
/// `[0, 1]` and drawn as a `P x P` block per patch.
pub fn attention_heatmap(alpha: &PatchAttention, grid: &PatchGrid) -> GrayImage {
    let received = alpha.received();
    let (lo, hi) = received
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let p = grid.patch_size;
    GrayImage::from_fn(grid.width(), grid.height(), |x, y| {
        let v = received[(y / p) * grid.cols + x / p];
        if span > 0.0 {
            ((v - lo) / span) as f32
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct SiftReport {
    pub keypoints: Vec<Keypoint>,
    pub overlay: GrayImage,
    pub files: Vec<PathBuf>,
}

pub fn cmd_sift(image: &Path, params: &SiftParams, out_dir: &Path) -> Result<SiftReport, Error> {
    check_sift(params)?;
    let gray = to_grayscale(&load_image(image)?);
    let keypoints = detect_keypoints(&gray, params);
    let overlay = render_overlay(&gray, &keypoints);
    create_dir(out_dir)?;
    let tsv = out_dir.join("keypoints.tsv");
    let pgm = out_dir.join("overlay.pgm");
    write(&tsv, keypoints_to_tsv(&keypoints).as_bytes())?;
    write(&pgm, &encode_pgm(&overlay))?;
    Ok(SiftReport {
        keypoints,
        overlay,
        files: vec![tsv, pgm],
    })
}

#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub prepared: Prepared,
    pub profile: LayerProfile,
    /// `None` for profiles shorter than three layers.
    pub stages: Option<StageSegmentation>,
    pub mean_theta: Vec<f64>,
    pub files: Vec<PathBuf>,
}

fn layers_csv(profile: &LayerProfile) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut out = String::from("layer,theta_kk,theta_kn,theta_nk,theta_nn,focus_index\n");
    for r in &profile.layers {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.layer,
            f(r.theta_kk),
            f(r.theta_kn),
            f(r.theta_nk),
            f(r.theta_nn),
            r.focus_index
        ));
    }
    out
}

fn mean_theta_csv(theta: &[f64]) -> String {
    let mut out = String::from("patch_index,theta_bar\n");
    for (i, t) in theta.iter().enumerate() {
        out.push_str(&format!("{i},{t}\n"));
    }
    out
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeReport, Error> {
    if cfg.model.is_none() {
        return Err(Error::Config("analyze needs an attention source".into()));
    }
    let prepared = prepare(cfg)?;
    let bundle = prepared.bundle.as_ref().expect("model source yields a bundle");
    let profile = layer_profile(bundle, &prepared.stats, &cfg.analysis)?;
    let stages = match segment_stages(&profile) {
        Ok(s) => Some(s),
        Err(AnalysisError::NotApplicable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mean_theta = profile.mean_theta(cfg.mask.theta_layers.as_deref())?;

    let dir = &cfg.out_dir;
    let heat_dir = dir.join("heatmaps");
    create_dir(&heat_dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<(), Error> {
        let path = dir.join(name);
        write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    emit("keypoints.tsv", keypoints_to_tsv(&prepared.keypoints).as_bytes())?;
    emit("patch_stats.csv", prepared.stats.to_csv(&prepared.grid).as_bytes())?;
    emit("profile.csv", profile.to_csv().as_bytes())?;
    emit("layers.csv", layers_csv(&profile).as_bytes())?;
    emit("mean_theta.csv", mean_theta_csv(&mean_theta).as_bytes())?;
    if let Some(s) = &stages {
        emit("stages.json", s.to_json().as_bytes())?;
    }
    if prepared.internal {
        let bytes = bundle.to_tensor_file().to_bytes().map_err(BundleError::from)?;
        emit("attention.vslt", &bytes)?;
    }
    for rec in &bundle.records {
        let alpha = PatchAttention::from_record(rec, bundle.meta.cls_token)?;
        let path = heat_dir.join(format!("L{}_H{}.pgm", rec.layer, rec.head));
        write(&path, &encode_pgm(&attention_heatmap(&alpha, &prepared.grid)))?;
        files.push(path);
    }
    Ok(AnalyzeReport {
        prepared,
        profile,
        stages,
        mean_theta,
        files,
    })
}

#[derive(Debug, Clone)]
pub struct MaskReport {
    pub plan: MaskPlan,
    pub masked: RgbImage,
    pub files: Vec<PathBuf>,
}

fn is_ppm(path: &Path) -> bool {
    fs::read(path).map(|b| b.starts_with(b"P6")).unwrap_or(false)
}

pub fn cmd_mask(cfg: &RunConfig) -> Result<MaskReport, Error> {
    let m = &cfg.mask;
    let ranked = matches!(m.mode, MaskMode::Top | MaskMode::Bottom);
    if ranked && cfg.model.is_none() {
        return Err(Error::Config(format!(
            "mode {} ranks patches by attention scores and needs an attention source",
            m.mode
        )));
    }
    let prepared = prepare(cfg)?;
    let plan = match m.mode {
        MaskMode::Top | MaskMode::Bottom => {
            let bundle = prepared.bundle.as_ref().expect("checked above");
            let profile = layer_profile(bundle, &prepared.stats, &cfg.analysis)?;
            rank_mask(&profile.mean_theta(m.theta_layers.as_deref())?, m.ratio, m.mode)?
        }
        MaskMode::Guided => guided_mask(&prepared.stats, m.ratio, m.beta, cfg.seed)?,
        MaskMode::Random => random_mask(prepared.grid.len(), m.ratio, cfg.seed)?,
    };
    let masked = apply_mask(&prepared.image, &plan, &prepared.grid, m.fill)?;

    create_dir(&cfg.out_dir)?;
    let plan_path = cfg.out_dir.join("mask_plan.json");
    write(&plan_path, plan.to_json().as_bytes())?;
    let (name, bytes) = if is_ppm(&cfg.image) {
        ("masked.ppm", encode_ppm(&masked))
    } else {
        ("masked.png", encode_png_rgb(&masked))
    };
    let img_path = cfg.out_dir.join(name);
    write(&img_path, &bytes)?;
    Ok(MaskReport {
        plan,
        masked,
        files: vec![plan_path, img_path],
    })
}

#[derive(Debug, Clone)]
pub struct ScheduleReport {
    pub stats: PatchStats,
    /// One plan per round, starting at round 0.
    pub plans: Vec<MaskPlan>,
    pub files: Vec<PathBuf>,
}

/// Guided plans for rounds `0..rounds` of a curriculum. The grid comes from
/// the model source when there is one, otherwise from `patch_size`.
pub fn cmd_schedule(cfg: &RunConfig, schedule: &CurriculumSchedule, rounds: usize) -> Result<ScheduleReport, Error> {
    let prepared = prepare(cfg)?;
    let mut csv = String::from("round,stage,beta,seed,masked,keypoint_masked,shortfall\n");
    let mut jsonl = String::new();
    let mut plans = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let plan = schedule_masks(&prepared.stats, schedule, round, cfg.seed)?;
        let keys = plan.masked.iter().filter(|&&j| prepared.stats.is_keypoint(j)).count();
        csv.push_str(&format!(
            "{round},{},{},{},{},{keys},{}\n",
            schedule.stage_for_round(round),
            plan.beta.unwrap_or_default(),
            plan.seed.unwrap_or_default(),
            plan.len(),
            plan.shortfall
        ));
        jsonl.push_str(&plan.to_json());
        jsonl.push('\n');
        plans.push(plan);
    }
    create_dir(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("schedule.csv");
    let jsonl_path = cfg.out_dir.join("plans.jsonl");
    write(&csv_path, csv.as_bytes())?;
    write(&jsonl_path, jsonl.as_bytes())?;
    Ok(ScheduleReport {
        stats: prepared.stats,
        plans,
        files: vec![csv_path, jsonl_path],
    })
}
