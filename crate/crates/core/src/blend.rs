//! Timestep attention blending between an inversion and a denoising pass.
//!
//! At the first (highest) step the foreground mask comes from thresholding
//! the inversion cross-attention. Every later step reuses the mask obtained
//! from the denoising cross-attention of the step before it, so the edited
//! region follows the subject as its pose changes. Within a step the
//! self-attention is combined as `M * s_den + (1 - M) * s_inv`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BLEND_RATIO: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlendError {
    #[error("attention file parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("token set is empty")]
    EmptyTokenSet,
    #[error("token index {index} out of range for {tokens} tokens")]
    TokenOutOfRange { index: usize, tokens: usize },
    #[error("threshold ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("inconsistent attention stack: {0}")]
    InconsistentStack(String),
}

/// Row-major `h x w` grid of non-negative finite values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl SpatialMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self, BlendError> {
        if h == 0 || w == 0 {
            return Err(BlendError::InvalidMap(format!("dimensions {h}x{w} must be positive")));
        }
        if values.len() != h * w {
            return Err(BlendError::InvalidMap(format!(
                "{h}x{w} map needs {} values, got {}",
                h * w,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(BlendError::InvalidMap(format!(
                "value {v} is not finite and non-negative"
            )));
        }
        Ok(Self { h, w, values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, BlendError> {
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(BlendError::InvalidMap("ragged rows".into()));
        }
        Self::new(rows.len(), w, rows.concat())
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            values: vec![0.0; h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.w + c]
    }
}

/// One spatial map per text token.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionMap {
    maps: Vec<SpatialMap>,
}

impl CrossAttentionMap {
    pub fn new(maps: Vec<SpatialMap>) -> Result<Self, BlendError> {
        let first = maps
            .first()
            .ok_or_else(|| BlendError::InvalidMap("cross-attention needs at least one token".into()))?
            .shape();
        if let Some(m) = maps.iter().find(|m| m.shape() != first) {
            return Err(BlendError::ShapeMismatch(format!(
                "token maps {:?} and {:?} differ",
                first,
                m.shape()
            )));
        }
        Ok(Self { maps })
    }

    pub fn tokens(&self) -> usize {
        self.maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps[0].shape()
    }

    pub fn maps(&self) -> &[SpatialMap] {
        &self.maps
    }
}

/// Binary `h x w` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self, BlendError> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(BlendError::InvalidMap(format!(
                "{h}x{w} mask with {} bits",
                bits.len()
            )));
        }
        Ok(Self { h, w, bits })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self, BlendError> {
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(BlendError::InvalidMap("ragged rows".into()));
        }
        Self::new(rows.len(), w, rows.concat().into_iter().map(|b| b != 0).collect())
    }

    pub fn filled(h: usize, w: usize, value: bool) -> Self {
        Self {
            h,
            w,
            bits: vec![value; h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.w + c]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, BlendError> {
        if self.shape() != other.shape() {
            return Err(BlendError::ShapeMismatch(format!(
                "mask union {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Mask {
            h: self.h,
            w: self.w,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("Mask", 3)?;
        s.serialize_field("h", &self.h)?;
        s.serialize_field("w", &self.w)?;
        let bits: Vec<u8> = self.bits.iter().map(|&b| u8::from(b)).collect();
        s.serialize_field("bits", &bits)?;
        s.end()
    }
}

/// Sums the selected token maps and keeps cells at or above
/// `ratio * max(sum)`. An all-zero sum gives an all-zero mask.
pub fn threshold_mask(
    c: &CrossAttentionMap,
    token_set: &[usize],
    ratio: f64,
) -> Result<Mask, BlendError> {
    if token_set.is_empty() {
        return Err(BlendError::EmptyTokenSet);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(BlendError::InvalidRatio(ratio));
    }
    if let Some(&index) = token_set.iter().find(|&&i| i >= c.tokens()) {
        return Err(BlendError::TokenOutOfRange {
            index,
            tokens: c.tokens(),
        });
    }
    let (h, w) = c.shape();
    let mut summed = vec![0.0; h * w];
    for &t in token_set {
        for (acc, v) in summed.iter_mut().zip(c.maps[t].values()) {
            *acc += v;
        }
    }
    let max = summed.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Mask::filled(h, w, false));
    }
    let cutoff = ratio * max;
    Mask::new(h, w, summed.iter().map(|&v| v >= cutoff).collect())
}

/// `m * s_den + (1 - m) * s_inv`, elementwise.
pub fn blend_step(m: &Mask, s_den: &SpatialMap, s_inv: &SpatialMap) -> Result<SpatialMap, BlendError> {
    if m.shape() != s_den.shape() || s_den.shape() != s_inv.shape() {
        return Err(BlendError::ShapeMismatch(format!(
            "mask {:?}, s_den {:?}, s_inv {:?}",
            m.shape(),
            s_den.shape(),
            s_inv.shape()
        )));
    }
    let values = m
        .bits
        .iter()
        .zip(s_den.values.iter().zip(&s_inv.values))
        .map(|(&bit, (&den, &inv))| {
            let mv = if bit { 1.0 } else { 0.0 };
            mv * den + (1.0 - mv) * inv
        })
        .collect();
    Ok(SpatialMap {
        h: s_den.h,
        w: s_den.w,
        values,
    })
}

/// Nearest-neighbour resampling; source cell for target row `r` is
/// `floor(r * h / h2)`, likewise for columns.
pub fn resize_mask(m: &Mask, h2: usize, w2: usize) -> Mask {
    assert!(h2 > 0 && w2 > 0, "target mask dimensions must be positive");
    if (h2, w2) == m.shape() {
        return m.clone();
    }
    let mut bits = Vec::with_capacity(h2 * w2);
    for r in 0..h2 {
        let sr = r * m.h / h2;
        for c in 0..w2 {
            let sc = c * m.w / w2;
            bits.push(m.get(sr, sc));
        }
    }
    Mask { h: h2, w: w2, bits }
}

/// Attention captured at one timestep from both passes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttention {
    pub step: usize,
    pub c_inv: CrossAttentionMap,
    pub s_inv: SpatialMap,
    pub c_den: CrossAttentionMap,
    pub s_den: SpatialMap,
}

impl StepAttention {
    fn check(&self) -> Result<(), BlendError> {
        if self.s_inv.shape() != self.s_den.shape() {
            return Err(BlendError::InconsistentStack(format!(
                "step {}: s_inv {:?} vs s_den {:?}",
                self.step,
                self.s_inv.shape(),
                self.s_den.shape()
            )));
        }
        if self.c_inv.shape() != self.c_den.shape() || self.c_inv.tokens() != self.c_den.tokens() {
            return Err(BlendError::InconsistentStack(format!(
                "step {}: c_inv and c_den disagree in shape or token count",
                self.step
            )));
        }
        Ok(())
    }
}

/// Steps in strictly descending order, first entry is `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    steps: Vec<StepAttention>,
}

impl AttentionStack {
    pub fn new(steps: Vec<StepAttention>) -> Result<Self, BlendError> {
        if steps.is_empty() {
            return Err(BlendError::InconsistentStack("no steps".into()));
        }
        for pair in steps.windows(2) {
            if pair[1].step >= pair[0].step {
                return Err(BlendError::InconsistentStack(format!(
                    "step {} follows {}; steps must strictly descend",
                    pair[1].step, pair[0].step
                )));
            }
        }
        for s in &steps {
            s.check()?;
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[StepAttention] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendConfig {
    pub tokens: Vec<usize>,
    pub ratio: f64,
    /// Union every propagated mask with the initial inversion mask.
    pub union_with_initial: bool,
}

impl BlendConfig {
    pub fn new(tokens: Vec<usize>, ratio: f64) -> Self {
        Self {
            tokens,
            ratio,
            union_with_initial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlendedStep {
    pub step: usize,
    pub mask: Mask,
    pub s_edit: SpatialMap,
}

/// Incremental form of the blending schedule. Feed steps from `T` downward.
#[derive(Debug, Clone)]
pub struct TimestepBlender {
    config: BlendConfig,
    initial: Option<Mask>,
    carried: Option<Mask>,
    last_step: Option<usize>,
}

impl TimestepBlender {
    pub fn new(config: BlendConfig) -> Self {
        Self {
            config,
            initial: None,
            carried: None,
            last_step: None,
        }
    }

    pub fn step(&mut self, rec: &StepAttention) -> Result<BlendedStep, BlendError> {
        rec.check()?;
        if let Some(prev) = self.last_step {
            if rec.step >= prev {
                return Err(BlendError::InconsistentStack(format!(
                    "step {} follows {}; steps must strictly descend",
                    rec.step, prev
                )));
            }
        }
        let (h, w) = rec.s_den.shape();
        let mask = match (&self.initial, &self.carried) {
            (Some(initial), Some(carried)) => {
                let m = resize_mask(carried, h, w);
                if self.config.union_with_initial {
                    m.union(&resize_mask(initial, h, w))?
                } else {
                    m
                }
            }
            _ => {
                let m = threshold_mask(&rec.c_inv, &self.config.tokens, self.config.ratio)?;
                self.initial = Some(m.clone());
                resize_mask(&m, h, w)
            }
        };
        let s_edit = blend_step(&mask, &rec.s_den, &rec.s_inv)?;
        self.carried = Some(threshold_mask(&rec.c_den, &self.config.tokens, self.config.ratio)?);
        self.last_step = Some(rec.step);
        Ok(BlendedStep {
            step: rec.step,
            mask,
            s_edit,
        })
    }
}

/// Blended self-attention for every step of `stack`, in stack order.
pub fn run_blend_schedule(
    stack: &AttentionStack,
    config: &BlendConfig,
) -> Result<Vec<BlendedStep>, BlendError> {
    let mut blender = TimestepBlender::new(config.clone());
    stack.steps.iter().map(|s| blender.step(s)).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    step: usize,
    c_inv: Vec<RawMap>,
    s_inv: RawMap,
    c_den: Vec<RawMap>,
    s_den: RawMap,
}

fn map_from_raw(raw: RawMap, path: String) -> Result<SpatialMap, BlendError> {
    SpatialMap::new(raw.h, raw.w, raw.values).map_err(|e| BlendError::Parse {
        path,
        message: e.to_string(),
    })
}

fn cross_from_raw(raw: Vec<RawMap>, path: String) -> Result<CrossAttentionMap, BlendError> {
    let maps = raw
        .into_iter()
        .enumerate()
        .map(|(i, m)| map_from_raw(m, format!("{path}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    CrossAttentionMap::new(maps).map_err(|e| BlendError::Parse {
        path,
        message: e.to_string(),
    })
}

/// Parses an attention-stack file: an array of
/// `{step, c_inv: [map], s_inv: map, c_den: [map], s_den: map}` with maps as
/// `{h, w, values: [row-major reals]}`.
pub fn parse_attention_stack(text: &str) -> Result<AttentionStack, BlendError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: Vec<RawStep> = serde_path_to_error::deserialize(de).map_err(|e| BlendError::Parse {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let steps = raw
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(StepAttention {
                step: r.step,
                c_inv: cross_from_raw(r.c_inv, format!("[{i}].c_inv"))?,
                s_inv: map_from_raw(r.s_inv, format!("[{i}].s_inv"))?,
                c_den: cross_from_raw(r.c_den, format!("[{i}].c_den"))?,
                s_den: map_from_raw(r.s_den, format!("[{i}].s_den"))?,
            })
        })
        .collect::<Result<Vec<_>, BlendError>>()?;
    AttentionStack::new(steps)
}

/// Inverse of [`parse_attention_stack`].
pub fn serialize_attention_stack(stack: &AttentionStack) -> String {
    let records: Vec<_> = stack
        .steps
        .iter()
        .map(|s| {
            serde_json::json!({
                "step": s.step,
                "c_inv": s.c_inv.maps,
                "s_inv": s.s_inv,
                "c_den": s.c_den.maps,
                "s_den": s.s_den,
            })
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&records).expect("json values serialize");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[&[f64]]) -> SpatialMap {
        SpatialMap::from_rows(rows).unwrap()
    }

    fn cross(maps: Vec<SpatialMap>) -> CrossAttentionMap {
        CrossAttentionMap::new(maps).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let c = cross(vec![map(&[&[0.9, 0.1], &[0.2, 0.8]])]);
        assert_eq!(
            threshold_mask(&c, &[0], 0.5).unwrap(),
            Mask::from_rows(&[&[1, 0], &[0, 1]]).unwrap()
        );
        let uniform = cross(vec![map(&[&[0.4, 0.4], &[0.4, 0.4]])]);
        for ratio in [0.1, 0.5, 1.0] {
            assert_eq!(threshold_mask(&uniform, &[0], ratio).unwrap().count_ones(), 4);
        }
        let zero = cross(vec![SpatialMap::zeros(2, 3)]);
        assert_eq!(threshold_mask(&zero, &[0], 0.3).unwrap().count_ones(), 0);
    }

    #[test]
    fn threshold_sums_selected_tokens() {
        let c = cross(vec![
            map(&[&[1.0, 0.0], &[0.0, 0.0]]),
            map(&[&[0.0, 0.0], &[0.0, 5.0]]),
            map(&[&[0.0, 0.9], &[0.0, 0.0]]),
        ]);
        let m = threshold_mask(&c, &[0, 2], 0.95).unwrap();
        assert_eq!(m, Mask::from_rows(&[&[1, 0], &[0, 0]]).unwrap());
        let m = threshold_mask(&c, &[0, 2], 0.9).unwrap();
        assert_eq!(m, Mask::from_rows(&[&[1, 1], &[0, 0]]).unwrap());
    }

    #[test]
    fn threshold_errors() {
        let c = cross(vec![map(&[&[1.0]])]);
        assert_eq!(threshold_mask(&c, &[], 0.3), Err(BlendError::EmptyTokenSet));
        assert_eq!(
            threshold_mask(&c, &[1], 0.3),
            Err(BlendError::TokenOutOfRange { index: 1, tokens: 1 })
        );
        assert_eq!(threshold_mask(&c, &[0], 0.0), Err(BlendError::InvalidRatio(0.0)));
        assert_eq!(threshold_mask(&c, &[0], 1.5), Err(BlendError::InvalidRatio(1.5)));
    }

    #[test]
    fn blend_examples() {
        let den = map(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let inv = map(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(blend_step(&Mask::filled(2, 2, true), &den, &inv).unwrap(), den);
        assert_eq!(blend_step(&Mask::filled(2, 2, false), &den, &inv).unwrap(), inv);
        let diag = Mask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        assert_eq!(
            blend_step(&diag, &den, &inv).unwrap(),
            map(&[&[1.0, 6.0], &[7.0, 4.0]])
        );
        assert!(matches!(
            blend_step(&Mask::filled(1, 2, true), &den, &inv),
            Err(BlendError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn resize_examples() {
        let m = Mask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        assert_eq!(resize_mask(&m, 2, 2), m);
        let up = resize_mask(&m, 4, 4);
        assert_eq!(
            up,
            Mask::from_rows(&[&[1, 1, 0, 0], &[1, 1, 0, 0], &[0, 0, 1, 1], &[0, 0, 1, 1]]).unwrap()
        );
        assert_eq!(resize_mask(&up, 2, 2), m);
        let wide = Mask::from_rows(&[&[1, 1, 0, 0, 1, 1]]).unwrap();
        assert_eq!(resize_mask(&resize_mask(&wide, 1, 3), 1, 6), wide);
    }

    fn step(n: usize, c_inv: f64, c_den: f64) -> StepAttention {
        StepAttention {
            step: n,
            c_inv: cross(vec![map(&[&[c_inv, 0.1]])]),
            s_inv: map(&[&[0.0, 0.0]]),
            c_den: cross(vec![map(&[&[c_den, 0.1]])]),
            s_den: map(&[&[1.0, 1.0]]),
        }
    }

    #[test]
    fn single_step_schedule_is_one_blend() {
        let stack = AttentionStack::new(vec![step(1, 1.0, 0.0)]).unwrap();
        let cfg = BlendConfig::new(vec![0], 0.3);
        let out = run_blend_schedule(&stack, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        let s = &stack.steps()[0];
        let m = threshold_mask(&s.c_inv, &[0], 0.3).unwrap();
        assert_eq!(out[0].s_edit, blend_step(&m, &s.s_den, &s.s_inv).unwrap());
    }

    #[test]
    fn mask_propagates_from_previous_denoise_step() {
        // c_den at step 3 marks only the right cell; step 2 must use it.
        let mut s3 = step(3, 1.0, 0.0);
        s3.c_den = cross(vec![map(&[&[0.0, 1.0]])]);
        let stack = AttentionStack::new(vec![s3, step(2, 0.0, 1.0), step(1, 0.0, 0.0)]).unwrap();
        let out = run_blend_schedule(&stack, &BlendConfig::new(vec![0], 0.5)).unwrap();
        assert_eq!(out[0].mask, Mask::from_rows(&[&[1, 0]]).unwrap());
        assert_eq!(out[1].mask, Mask::from_rows(&[&[0, 1]]).unwrap());
        assert_eq!(out[2].mask, Mask::from_rows(&[&[1, 0]]).unwrap());

        let mut cfg = BlendConfig::new(vec![0], 0.5);
        cfg.union_with_initial = true;
        let out = run_blend_schedule(&stack, &cfg).unwrap();
        assert_eq!(out[0].mask, Mask::from_rows(&[&[1, 0]]).unwrap());
        assert_eq!(out[1].mask, Mask::from_rows(&[&[1, 1]]).unwrap());
        assert_eq!(out[2].mask, Mask::from_rows(&[&[1, 0]]).unwrap());
    }

    #[test]
    fn identical_cross_maps_give_identical_masks() {
        let stack = AttentionStack::new(vec![step(5, 0.7, 0.7), step(4, 0.7, 0.7), step(2, 0.7, 0.7)]).unwrap();
        let out = run_blend_schedule(&stack, &BlendConfig::new(vec![0], 0.3)).unwrap();
        assert!(out.windows(2).all(|p| p[0].mask == p[1].mask));
    }

    #[test]
    fn stack_validation() {
        assert!(AttentionStack::new(vec![]).is_err());
        assert!(matches!(
            AttentionStack::new(vec![step(1, 1.0, 1.0), step(2, 1.0, 1.0)]),
            Err(BlendError::InconsistentStack(_))
        ));
        let mut bad = step(1, 1.0, 1.0);
        bad.s_den = map(&[&[1.0], &[1.0]]);
        assert!(matches!(
            AttentionStack::new(vec![bad]),
            Err(BlendError::InconsistentStack(_))
        ));
    }

    #[test]
    fn cross_resolution_masks_are_resized() {
        let s = StepAttention {
            step: 1,
            c_inv: cross(vec![map(&[&[1.0, 0.0], &[0.0, 0.0]])]),
            s_inv: SpatialMap::zeros(4, 4),
            c_den: cross(vec![map(&[&[1.0, 0.0], &[0.0, 0.0]])]),
            s_den: SpatialMap::new(4, 4, vec![1.0; 16]).unwrap(),
        };
        let out = run_blend_schedule(&AttentionStack::new(vec![s]).unwrap(), &BlendConfig::new(vec![0], 0.5)).unwrap();
        assert_eq!(out[0].mask.count_ones(), 4);
        assert_eq!(out[0].s_edit.values().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn file_roundtrip() {
        let stack = AttentionStack::new(vec![step(2, 0.5, 0.25), step(1, 0.125, 1.0)]).unwrap();
        let text = serialize_attention_stack(&stack);
        assert_eq!(parse_attention_stack(&text).unwrap(), stack);
        let bad = r#"[{"step": 1, "c_inv": [{"h": 1, "w": 2, "values": [1]}], "s_inv": {"h": 1, "w": 1, "values": [0]}, "c_den": [{"h": 1, "w": 1, "values": [0]}], "s_den": {"h": 1, "w": 1, "values": [0]}}]"#;
        assert!(matches!(
            parse_attention_stack(bad),
            Err(BlendError::Parse { path, .. }) if path == "[0].c_inv[0]"
        ));
    }
}
