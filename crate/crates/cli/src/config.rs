//! Run configuration: one TOML file plus command-line overrides.
//!
//! ```toml
//! frame_count = 12
//! iou_threshold = 0.3
//! blend_ratio = 0.3
//! top_k = 1
//! db = "pose_db/manifest.json"
//! out_dir = "out"
//! embedder_command = "my-embedder --text"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{read_text, PipelineError, Result};

pub const DEFAULT_FRAME_COUNT: usize = 12;
pub const LONG_VIDEO_FRAME_COUNT: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frame_count: usize,
    pub iou_threshold: f64,
    pub blend_ratio: f64,
    pub top_k: usize,
    pub paths: Paths,
    /// Program (plus leading arguments) that prints an embedding document
    /// for the text passed as its final argument.
    pub embedder_command: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub source: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub answer: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub query_embedding: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_count: DEFAULT_FRAME_COUNT,
            iou_threshold: posedit_core::editor::DEFAULT_IOU_THRESHOLD,
            blend_ratio: posedit_core::blend::DEFAULT_BLEND_RATIO,
            top_k: 1,
            paths: Paths::default(),
            embedder_command: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    frame_count: Option<usize>,
    iou_threshold: Option<f64>,
    blend_ratio: Option<f64>,
    top_k: Option<usize>,
    source: Option<PathBuf>,
    detections: Option<PathBuf>,
    answer: Option<PathBuf>,
    db: Option<PathBuf>,
    query_embedding: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    embedder_command: Option<String>,
}

/// Values given on the command line; `Some` wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub frame_count: Option<usize>,
    pub iou_threshold: Option<f64>,
    pub blend_ratio: Option<f64>,
    pub top_k: Option<usize>,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| PipelineError::parse("config", e))?;
        let rel = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        let d = Self::default();
        let embedder_command = match file.embedder_command {
            Some(cmd) => {
                let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
                if parts.is_empty() {
                    return Err(PipelineError::parse("config", "embedder_command is empty"));
                }
                Some(parts)
            }
            None => None,
        };
        Ok(Self {
            frame_count: file.frame_count.unwrap_or(d.frame_count),
            iou_threshold: file.iou_threshold.unwrap_or(d.iou_threshold),
            blend_ratio: file.blend_ratio.unwrap_or(d.blend_ratio),
            top_k: file.top_k.unwrap_or(d.top_k),
            paths: Paths {
                source: rel(file.source),
                detections: rel(file.detections),
                answer: rel(file.answer),
                db: rel(file.db),
                query_embedding: rel(file.query_embedding),
                out_dir: rel(file.out_dir),
            },
            embedder_command,
        })
    }

    /// Loads `config` (if any), applies `overrides` and validates.
    pub fn resolve(config: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut cfg = match config {
            Some(path) => {
                let base = path.parent().unwrap_or(Path::new("."));
                Self::from_toml(&read_text("config", path)?, base)?
            }
            None => Self::default(),
        };
        cfg.frame_count = overrides.frame_count.unwrap_or(cfg.frame_count);
        cfg.iou_threshold = overrides.iou_threshold.unwrap_or(cfg.iou_threshold);
        cfg.blend_ratio = overrides.blend_ratio.unwrap_or(cfg.blend_ratio);
        cfg.top_k = overrides.top_k.unwrap_or(cfg.top_k);
        let p = overrides.paths;
        let paths = &mut cfg.paths;
        for (slot, value) in [
            (&mut paths.source, p.source),
            (&mut paths.detections, p.detections),
            (&mut paths.answer, p.answer),
            (&mut paths.db, p.db),
            (&mut paths.query_embedding, p.query_embedding),
            (&mut paths.out_dir, p.out_dir),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(PipelineError::parse("config", "frame_count must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(PipelineError::parse("config", "top_k must be at least 1"));
        }
        for (name, v) in [("iou_threshold", self.iou_threshold), ("blend_ratio", self.blend_ratio)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(PipelineError::parse(
                    "config",
                    format!("{name} must lie strictly between 0 and 1, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| {
            PipelineError::parse("config", format!("missing input: pass --{flag} or set it in --config"))
        })
    }
}
