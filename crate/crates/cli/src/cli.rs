use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use posedit_core::blend::BlendConfig;
use posedit_core::ddim::DEFAULT_STEPS;

use crate::config::{Overrides, Paths, PipelineConfig};
use crate::demos::{blend_outputs, ddim_outputs, DdimDemoConfig};
use crate::error::{read_text, PipelineError, Result};
use crate::output::OutputSet;
use crate::pipeline::{run_align, run_edit, run_retrieve};
use crate::report::run_metrics;

#[derive(Debug, Parser)]
#[command(name = "posedit", version, about = "Pose-guided video editing pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs and manifest.json.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub source: Option<PathBuf>,
    #[arg(long, global = true)]
    pub detections: Option<PathBuf>,
    #[arg(long, global = true)]
    pub answer: Option<PathBuf>,
    /// Pose database manifest.
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    #[arg(long, global = true)]
    pub query_embedding: Option<PathBuf>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Target frame count (12 normal, 24 long video).
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    #[arg(long, global = true)]
    pub iou_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub blend_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit a similarity transform between two point sets.
    Align {
        /// Point-pair file `{x_ps, mask_ps?, x_pd, mask_pd?}`.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Rank database entries against a query embedding.
    Retrieve {
        #[command(flatten)]
        common: Common,
    },
    /// Replace the described people's poses with the retrieved motion.
    Edit {
        #[command(flatten)]
        common: Common,
    },
    /// Run timestep attention blending over an attention-stack file.
    BlendDemo {
        #[arg(long)]
        attention: PathBuf,
        /// Cross-attention token indices forming the subject.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        tokens: Vec<usize>,
        /// Union every propagated mask with the first-step mask.
        #[arg(long)]
        union_mask: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Invert and resample a toy latent with blending attached.
    DdimDemo {
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        tokens: Vec<usize>,
        #[arg(long)]
        union_mask: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compute Vid-Acc, Vid-Con and GT-Con from an embedding manifest.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        PipelineConfig::resolve(
            self.config.as_deref(),
            Overrides {
                frame_count: self.frames,
                iou_threshold: self.iou_threshold,
                blend_ratio: self.blend_ratio,
                top_k: self.top_k,
                paths: Paths {
                    source: self.source.clone(),
                    detections: self.detections.clone(),
                    answer: self.answer.clone(),
                    db: self.db.clone(),
                    query_embedding: self.query_embedding.clone(),
                    out_dir: self.out_dir.clone(),
                },
            },
        )
    }
}

fn blend_config(tokens: &[usize], cfg: &PipelineConfig, union_mask: bool) -> BlendConfig {
    BlendConfig {
        tokens: tokens.to_vec(),
        ratio: cfg.blend_ratio,
        union_with_initial: union_mask,
    }
}

type Producer<'a> = Box<dyn Fn(&PipelineConfig) -> Result<OutputSet> + 'a>;

/// Runs one command and writes its outputs; returns the output directory.
pub fn execute(cmd: &Cmd) -> Result<PathBuf> {
    let (common, outputs): (&Common, Producer) = match cmd {
        Cmd::Align { input, common } => (common, Box::new(move |_| run_align(input))),
        Cmd::Retrieve { common } => (common, Box::new(run_retrieve)),
        Cmd::Edit { common } => (common, Box::new(run_edit)),
        Cmd::BlendDemo {
            attention,
            tokens,
            union_mask,
            common,
        } => (
            common,
            Box::new(move |cfg| {
                blend_outputs(&read_text("blend", attention)?, &blend_config(tokens, cfg, *union_mask))
            }),
        ),
        Cmd::DdimDemo {
            steps,
            dim,
            tokens,
            union_mask,
            common,
        } => (
            common,
            Box::new(move |cfg| {
                ddim_outputs(&DdimDemoConfig {
                    steps: *steps,
                    dim: *dim,
                    grid: (4, 4),
                    blend: blend_config(tokens, cfg, *union_mask),
                })
            }),
        ),
        Cmd::Metrics { manifest, common } => (common, Box::new(move |_| run_metrics(manifest))),
    };
    let cfg = common.resolve()?;
    let dir = cfg
        .paths
        .out_dir
        .clone()
        .ok_or_else(|| PipelineError::parse("config", "missing output: pass --out-dir or set out_dir in --config"))?;
    outputs(&cfg)?.write(&dir)?;
    Ok(dir)
}
