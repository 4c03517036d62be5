//! Deterministic DDIM stepping and inversion over flat latent vectors.
//!
//! With cumulative noise coefficients `a_t` the denoising update is
//!
//! ```text
//! z_{t-1} = sqrt(a_{t-1}) * (z_t - sqrt(1 - a_t) * eps) / sqrt(a_t) + sqrt(1 - a_{t-1}) * eps
//! ```
//!
//! and inversion solves the same relation for `z_t`. Noise predictors are
//! caller-supplied; the analytic ones here exist so trajectories have
//! closed forms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blend::{
    BlendError, BlendedStep, CrossAttentionMap, SpatialMap, StepAttention, TimestepBlender,
};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdimError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {t} out of range for a {steps}-step schedule")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("dimension mismatch: latent has {latent}, other has {other}")]
    Dimension { latent: usize, other: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("blend hook failed: {0}")]
    Blend(#[from] BlendError),
}

/// Cumulative noise schedule; `alphas[0] = 1` and
/// `alphas[t] = alphas[t - 1] * (1 - betas[t - 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdimSchedule {
    #[serde(rename = "T")]
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    alphas: Vec<f64>,
    #[serde(skip)]
    betas: Vec<f64>,
}

/// Linear beta ramp over `steps` values.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DdimSchedule, DdimError> {
    check_range(steps, beta_start, beta_end)?;
    let betas = linear_betas(steps, beta_start, beta_end);
    DdimSchedule::from_parts(beta_start, beta_end, betas)
}

fn check_range(steps: usize, beta_start: f64, beta_end: f64) -> Result<(), DdimError> {
    if steps == 0 {
        return Err(DdimError::InvalidSchedule("at least one step required".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DdimError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    Ok(())
}

fn linear_betas(n: usize, start: f64, end: f64) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect()
}

impl DdimSchedule {
    fn from_parts(beta_start: f64, beta_end: f64, betas: Vec<f64>) -> Result<Self, DdimError> {
        let mut alphas = Vec::with_capacity(betas.len() + 1);
        alphas.push(1.0);
        for b in &betas {
            if !(*b > 0.0 && *b < 1.0) {
                return Err(DdimError::InvalidSchedule(format!("beta {b} outside (0, 1)")));
            }
            let prev = *alphas.last().expect("non-empty");
            alphas.push(prev * (1.0 - b));
        }
        Ok(Self {
            steps: betas.len(),
            beta_start,
            beta_end,
            alphas,
            betas,
        })
    }

    /// Schedule from explicit per-step betas.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DdimError> {
        if betas.is_empty() {
            return Err(DdimError::InvalidSchedule("at least one step required".into()));
        }
        let start = betas[0];
        let end = betas[betas.len() - 1];
        Self::from_parts(start, end, betas)
    }

    /// Linear ramp over `train_steps`, keeping every `train_steps / steps`-th
    /// cumulative alpha. Betas are re-derived so the product law holds.
    pub fn subsampled(
        train_steps: usize,
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    ) -> Result<Self, DdimError> {
        check_range(steps, beta_start, beta_end)?;
        if train_steps < steps {
            return Err(DdimError::InvalidSchedule(format!(
                "cannot pick {steps} steps from {train_steps}"
            )));
        }
        let full = make_schedule(train_steps, beta_start, beta_end)?;
        let stride = train_steps / steps;
        let picked: Vec<f64> = (0..=steps).map(|k| full.alphas[k * stride]).collect();
        Ok(Self {
            steps,
            beta_start,
            beta_end,
            betas: picked.windows(2).map(|w| 1.0 - w[1] / w[0]).collect(),
            alphas: picked,
        })
    }

    /// 50 steps subsampled from the 1000-step 0.00085..0.012 ramp.
    pub fn default_toy() -> Self {
        Self::subsampled(DEFAULT_TRAIN_STEPS, DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// `{T, beta_start, beta_end, alphas}` dump.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schedule serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DdimError> {
        let raw: DdimSchedule = serde_json::from_str(text)
            .map_err(|e| DdimError::InvalidSchedule(e.to_string()))?;
        if raw.alphas.len() != raw.steps + 1 || raw.alphas[0] != 1.0 {
            return Err(DdimError::InvalidSchedule(
                "alphas must hold T + 1 values starting at 1".into(),
            ));
        }
        let betas = raw.alphas.windows(2).map(|w| 1.0 - w[1] / w[0]).collect();
        Ok(Self { betas, ..raw })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
    pub t: usize,
}

impl LatentState {
    pub fn new(values: Vec<f64>, t: usize) -> Self {
        Self { values, t }
    }
}

/// Opaque conditioning vector handed to the predictor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptEmbedding {
    pub values: Vec<f64>,
}

pub trait NoisePredictor {
    fn predict(&self, z: &[f64], t: usize, prompt: &PromptEmbedding) -> Vec<f64>;

    /// Attention captured while predicting at step `t`, if the predictor
    /// exposes any.
    fn attention(&self, _z: &[f64], _t: usize, _prompt: &PromptEmbedding) -> Option<StepAttention> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &[f64], _t: usize, _prompt: &PromptEmbedding) -> Vec<f64> {
        vec![0.0; z.len()]
    }
}

#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    pub eps: Vec<f64>,
}

impl NoisePredictor for ConstantPredictor {
    fn predict(&self, _z: &[f64], _t: usize, _prompt: &PromptEmbedding) -> Vec<f64> {
        self.eps.clone()
    }
}

/// `eps(z, t, prompt) = A z`. Optionally emits synthetic attention on an
/// `h x w` grid built from `|z|` and `|A z|`.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    pub matrix: DMatrix<f64>,
    pub attention_grid: Option<(usize, usize)>,
}

impl LinearPredictor {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            attention_grid: None,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn with_attention(mut self, h: usize, w: usize) -> Self {
        self.attention_grid = Some((h, w));
        self
    }
}

impl NoisePredictor for LinearPredictor {
    fn predict(&self, z: &[f64], _t: usize, _prompt: &PromptEmbedding) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(z)).as_slice().to_vec()
    }

    fn attention(&self, z: &[f64], t: usize, prompt: &PromptEmbedding) -> Option<StepAttention> {
        let (h, w) = self.attention_grid?;
        let d = z.len();
        if d == 0 || h == 0 || w == 0 {
            return None;
        }
        let eps = self.predict(z, t, prompt);
        let grid = |f: &dyn Fn(usize) -> f64| {
            SpatialMap::new(h, w, (0..h * w).map(f).collect()).expect("abs values are valid")
        };
        let subject = grid(&|k| z[k % d].abs());
        let motion = grid(&|k| eps[k % d].abs());
        let mirrored = grid(&|k| z[d - 1 - k % d].abs());
        Some(StepAttention {
            step: t,
            c_inv: CrossAttentionMap::new(vec![mirrored.clone(), motion.clone()]).ok()?,
            s_inv: subject.clone(),
            c_den: CrossAttentionMap::new(vec![subject, mirrored]).ok()?,
            s_den: motion,
        })
    }
}

fn check_vec(z: &[f64], other: &[f64]) -> Result<(), DdimError> {
    if z.len() != other.len() {
        return Err(DdimError::Dimension {
            latent: z.len(),
            other: other.len(),
        });
    }
    if other.iter().any(|v| !v.is_finite()) {
        return Err(DdimError::NonFinite("noise prediction"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DdimError::NonFinite("latent"));
    }
    Ok(())
}

/// One denoising step `z_t -> z_{t-1}`.
pub fn ddim_denoise_step(
    z_t: &LatentState,
    eps: &[f64],
    sched: &DdimSchedule,
) -> Result<LatentState, DdimError> {
    let t = z_t.t;
    if t == 0 || t > sched.steps {
        return Err(DdimError::StepOutOfRange {
            t,
            steps: sched.steps,
        });
    }
    check_vec(&z_t.values, eps)?;
    let a_t = sched.alphas[t];
    let a_prev = sched.alphas[t - 1];
    let (sa_t, sa_prev) = (a_t.sqrt(), a_prev.sqrt());
    let (sb_t, sb_prev) = ((1.0 - a_t).sqrt(), (1.0 - a_prev).sqrt());
    let values = z_t
        .values
        .iter()
        .zip(eps)
        .map(|(&z, &e)| sa_prev * (z - sb_t * e) / sa_t + sb_prev * e)
        .collect();
    Ok(LatentState { values, t: t - 1 })
}

/// Inverse of [`ddim_denoise_step`] for a fixed `eps`: `z_{t-1} -> z_t`.
pub fn ddim_invert_step(
    z_prev: &LatentState,
    eps: &[f64],
    sched: &DdimSchedule,
) -> Result<LatentState, DdimError> {
    let t = z_prev.t + 1;
    if t > sched.steps {
        return Err(DdimError::StepOutOfRange {
            t: z_prev.t,
            steps: sched.steps,
        });
    }
    check_vec(&z_prev.values, eps)?;
    let a_t = sched.alphas[t];
    let a_prev = sched.alphas[t - 1];
    let (sa_t, sa_prev) = (a_t.sqrt(), a_prev.sqrt());
    let (sb_t, sb_prev) = ((1.0 - a_t).sqrt(), (1.0 - a_prev).sqrt());
    let values = z_prev
        .values
        .iter()
        .zip(eps)
        .map(|(&z, &e)| sa_t * (z - sb_prev * e) / sa_prev + sb_t * e)
        .collect();
    Ok(LatentState { values, t })
}

/// Squared L2 distance between true and predicted noise.
pub fn ldm_loss(eps_true: &[f64], eps_pred: &[f64]) -> Result<f64, DdimError> {
    if eps_true.len() != eps_pred.len() {
        return Err(DdimError::Dimension {
            latent: eps_true.len(),
            other: eps_pred.len(),
        });
    }
    Ok(eps_true
        .iter()
        .zip(eps_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Controls the fixed-point refinement used by [`invert_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    /// Extra predictor evaluations at the unknown `z_t`; 0 gives plain
    /// DDIM inversion with the noise predicted at `z_{t-1}`.
    pub max_refinements: usize,
    /// Stop once successive iterates differ by at most this (max-abs).
    pub tolerance: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_refinements: 100,
            tolerance: 1e-15,
        }
    }
}

/// Runs inversion from `z_0` up to `z_T`; returns `[z_0, z_1, ..., z_T]`.
///
/// Each step looks for `z_t` satisfying `denoise(z_t, eps(z_t, t)) = z_{t-1}`
/// by fixed-point iteration, so a subsequent [`sample_with_blend`] with the
/// same predictor retraces the path.
pub fn invert_trajectory(
    z0: &[f64],
    pred: &dyn NoisePredictor,
    prompt: &PromptEmbedding,
    sched: &DdimSchedule,
    config: InversionConfig,
) -> Result<Vec<LatentState>, DdimError> {
    let mut traj = vec![LatentState::new(z0.to_vec(), 0)];
    for t in 1..=sched.steps {
        let prev = traj.last().expect("non-empty");
        let mut cur = ddim_invert_step(prev, &pred.predict(&prev.values, t, prompt), sched)?;
        for _ in 0..config.max_refinements {
            let next = ddim_invert_step(prev, &pred.predict(&cur.values, t, prompt), sched)?;
            let delta = next
                .values
                .iter()
                .zip(&cur.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            cur = next;
            if delta <= config.tolerance {
                break;
            }
        }
        traj.push(cur);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `[z_T, z_{T-1}, ..., z_0]`.
    pub trajectory: Vec<LatentState>,
    pub blend_log: Vec<BlendedStep>,
}

/// Denoises from `z_T` down to `z_0`. When a blender is supplied, the
/// predictor's attention record for each step is fed to it and the blended
/// result is logged; latents are unaffected by the hook.
pub fn sample_with_blend(
    z_t: &LatentState,
    pred: &dyn NoisePredictor,
    prompt: &PromptEmbedding,
    sched: &DdimSchedule,
    mut blend_hook: Option<&mut TimestepBlender>,
) -> Result<SampleOutput, DdimError> {
    if z_t.t != sched.steps {
        return Err(DdimError::StepOutOfRange {
            t: z_t.t,
            steps: sched.steps,
        });
    }
    let mut trajectory = vec![z_t.clone()];
    let mut blend_log = Vec::new();
    for t in (1..=sched.steps).rev() {
        let cur = trajectory.last().expect("non-empty");
        let eps = pred.predict(&cur.values, t, prompt);
        let next = ddim_denoise_step(cur, &eps, sched)?;
        if let Some(hook) = blend_hook.as_deref_mut() {
            if let Some(record) = pred.attention(&cur.values, t, prompt) {
                blend_log.push(hook.step(&record)?);
            }
        }
        trajectory.push(next);
    }
    Ok(SampleOutput {
        trajectory,
        blend_log,
    })
}
