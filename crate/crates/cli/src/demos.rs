//! `blend-demo` and `ddim-demo`.

use posedit_core::blend::{parse_attention_stack, run_blend_schedule, BlendConfig, TimestepBlender};
use posedit_core::ddim::{
    invert_trajectory, sample_with_blend, DdimSchedule, InversionConfig, LinearPredictor,
    PromptEmbedding, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS,
};
use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::output::OutputSet;

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("demo output serializes");
    s.push('\n');
    s
}

/// Runs the blending schedule over an attention-stack file and writes
/// `blended.json`: one `{step, mask, s_edit}` record per step.
pub fn blend_outputs(stack_text: &str, config: &BlendConfig) -> Result<OutputSet> {
    let stack = parse_attention_stack(stack_text).map_err(|e| PipelineError::parse("blend", e))?;
    let steps = run_blend_schedule(&stack, config).map_err(|e| PipelineError::stage("blend", e))?;
    let mut out = OutputSet::new();
    out.add("blended.json", pretty(&steps));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdimDemoConfig {
    pub steps: usize,
    pub dim: usize,
    pub grid: (usize, usize),
    pub blend: BlendConfig,
}

#[derive(Serialize)]
struct Trajectories {
    inversion: Vec<Vec<f64>>,
    sampling: Vec<Vec<f64>>,
    roundtrip_max_abs_error: f64,
}

/// Toy latent `z_0[k] = sin(k + 1)`.
pub fn demo_latent(dim: usize) -> Vec<f64> {
    (0..dim).map(|k| ((k + 1) as f64).sin()).collect()
}

/// Diagonal linear predictor with entries cycling through 0.1..0.3.
pub fn demo_predictor(dim: usize, grid: (usize, usize)) -> LinearPredictor {
    let diag: Vec<f64> = (0..dim).map(|k| 0.1 + 0.05 * (k % 5) as f64).collect();
    LinearPredictor::diagonal(&diag).with_attention(grid.0, grid.1)
}

/// Inverts the toy latent, samples it back with blending attached, and
/// writes the schedule, both trajectories and the blend log.
pub fn ddim_outputs(cfg: &DdimDemoConfig) -> Result<OutputSet> {
    if cfg.dim == 0 {
        return Err(PipelineError::parse("ddim", "latent dimension must be at least 1"));
    }
    let sched = DdimSchedule::subsampled(DEFAULT_TRAIN_STEPS, cfg.steps, DEFAULT_BETA_START, DEFAULT_BETA_END)
        .map_err(|e| PipelineError::parse("ddim", e))?;
    let pred = demo_predictor(cfg.dim, cfg.grid);
    let prompt = PromptEmbedding::default();
    let z0 = demo_latent(cfg.dim);
    let inv = invert_trajectory(&z0, &pred, &prompt, &sched, InversionConfig::default())
        .map_err(|e| PipelineError::stage("ddim", e))?;
    let mut blender = TimestepBlender::new(cfg.blend.clone());
    let sample = sample_with_blend(inv.last().expect("non-empty"), &pred, &prompt, &sched, Some(&mut blender))
        .map_err(|e| PipelineError::stage("ddim", e))?;
    let recovered = &sample.trajectory.last().expect("non-empty").values;
    let err = recovered
        .iter()
        .zip(&z0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut out = OutputSet::new();
    out.add("schedule.json", sched.to_json());
    out.add(
        "trajectory.json",
        pretty(&Trajectories {
            inversion: inv.into_iter().map(|s| s.values).collect(),
            sampling: sample.trajectory.into_iter().map(|s| s.values).collect(),
            roundtrip_max_abs_error: err,
        }),
    );
    out.add("blend_log.json", pretty(&sample.blend_log));
    Ok(out)
}
