use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use keypoint_attention::analysis::{AnalysisParams, Weighting};
use keypoint_attention::masking::{CurriculumSchedule, CurriculumStage, Fill, MaskMode};
use keypoint_attention::report::{self, Error, MaskSettings, ModelSource, RunConfig};
use keypoint_attention::sift::SiftParams;
use keypoint_attention::vit::ViTConfig;

#[derive(Parser)]
#[command(name = "kpattn", version, about = "SIFT keypoint patches and keypoint-aware ViT attention analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect SIFT keypoints; writes keypoints.tsv and overlay.pgm.
    Sift {
        image: PathBuf,
        #[command(flatten)]
        sift: SiftArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Interrelation scores, focus indices, stages and heatmaps.
    Analyze {
        image: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Layers feeding mean_theta.csv, e.g. "0,1" (default: all).
        #[arg(long, value_delimiter = ',')]
        theta_layers: Option<Vec<usize>>,
    },
    /// Build a mask plan and render the masked image.
    Mask {
        image: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Use the built-in seeded ViT as attention source.
        #[arg(long, conflicts_with = "attn_bundle")]
        vit: bool,
        /// top, bottom, guided or random.
        #[arg(long, default_value = "guided")]
        mode: MaskMode,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        /// Fraction of masked patches that are keypoint patches (guided).
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// mean, gray or black.
        #[arg(long, default_value = "mean")]
        fill: Fill,
        /// Layers feeding the top/bottom ranking, e.g. "2,3" (default: all).
        #[arg(long, value_delimiter = ',')]
        theta_layers: Option<Vec<usize>>,
    },
    /// Guided curriculum plans, one per round.
    Schedule {
        image: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        /// Stage betas, non-decreasing.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        betas: Vec<f64>,
        /// Rounds per stage.
        #[arg(long, default_value_t = 10)]
        stage_rounds: usize,
        /// Rounds to emit (default: the schedule length).
        #[arg(long)]
        rounds: Option<usize>,
    },
}

#[derive(Args)]
struct SiftArgs {
    #[arg(long, default_value_t = 0.03)]
    contrast_threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    edge_ratio: f64,
    /// Upsample the image 2x before the first octave.
    #[arg(long)]
    upsample: bool,
}

impl SiftArgs {
    fn params(&self) -> SiftParams {
        SiftParams {
            contrast_threshold: self.contrast_threshold,
            edge_ratio: self.edge_ratio,
            upsample_first_octave: self.upsample,
            ..SiftParams::default()
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Detection-line scale.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Count keypoint patches once instead of weighting by keypoint count.
    #[arg(long)]
    unweighted: bool,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Embedding width.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    mlp_ratio: f64,
    /// Prepend a CLS token in the built-in model.
    #[arg(long)]
    cls: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attention bundle (VSLT) to analyze instead of the built-in model.
    #[arg(long)]
    attn_bundle: Option<PathBuf>,
    #[command(flatten)]
    sift: SiftArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn vit(&self) -> ViTConfig {
        ViTConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            layers: self.layers,
            heads: self.heads,
            embed_dim: self.dim,
            mlp_ratio: self.mlp_ratio,
            use_cls_token: self.cls,
        }
    }

    fn run_config(&self, image: PathBuf, internal: bool) -> RunConfig {
        let model = match (&self.attn_bundle, internal) {
            (Some(path), _) => Some(ModelSource::Bundle(path.clone())),
            (None, true) => Some(ModelSource::Internal {
                config: self.vit(),
                seed: self.seed,
            }),
            (None, false) => None,
        };
        RunConfig {
            image,
            model,
            patch_size: self.patch_size,
            sift: self.sift.params(),
            analysis: AnalysisParams {
                gamma: self.gamma,
                weighting: if self.unweighted { Weighting::Unweighted } else { Weighting::Weighted },
            },
            mask: MaskSettings::default(),
            out_dir: self.out.clone(),
            seed: self.seed,
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sift { image, sift, out } => {
            let r = report::cmd_sift(&image, &sift.params(), &out)?;
            eprintln!("{} keypoints", r.keypoints.len());
        }
        Command::Analyze { image, common, theta_layers } => {
            let mut cfg = common.run_config(image, true);
            cfg.mask.theta_layers = theta_layers;
            let r = report::cmd_analyze(&cfg)?;
            match r.stages {
                Some(s) => eprintln!("stages: b1 = {}, b2 = {} ({:?})", s.b1, s.b2, s.rule),
                None => eprintln!("stages: not applicable for {} layers", r.profile.layer_count()),
            }
        }
        Command::Mask {
            image,
            common,
            vit,
            mode,
            ratio,
            beta,
            fill,
            theta_layers,
        } => {
            let mut cfg = common.run_config(image, vit);
            cfg.mask = MaskSettings {
                mode,
                ratio,
                beta,
                fill,
                theta_layers,
            };
            let r = report::cmd_mask(&cfg)?;
            if r.plan.shortfall {
                eprintln!("warning: identity pool too small for beta = {beta}; plan was backfilled");
            }
            eprintln!("{} patches masked", r.plan.len());
        }
        Command::Schedule {
            image,
            common,
            ratio,
            betas,
            stage_rounds,
            rounds,
        } => {
            let stages = betas.iter().map(|&beta| CurriculumStage { beta, rounds: stage_rounds }).collect();
            let schedule = CurriculumSchedule::new(ratio, stages)?;
            let cfg = common.run_config(image, false);
            let rounds = rounds.unwrap_or_else(|| schedule.total_rounds());
            let r = report::cmd_schedule(&cfg, &schedule, rounds)?;
            let short = r.plans.iter().filter(|p| p.shortfall).count();
            if short > 0 {
                eprintln!("warning: {short} rounds were backfilled");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
