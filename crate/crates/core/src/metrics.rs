//! Editing-quality metrics over precomputed embeddings.
//!
//! - Vid-Acc: share of edited videos closer (cosine) to the target prompt
//!   than to the source prompt. Ties fail.
//! - Vid-Con: mean per-frame cosine between edited and source frames.
//! - GT-Con: the same mean against a ground-truth video.

use thiserror::Error;

use crate::retrieval::{cosine, EmbeddingVector, RetrievalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no metric cases supplied")]
    NoCases,
    #[error("video `{0}` has no frame embeddings")]
    NoFrames(String),
    #[error("video `{video_id}`: frame embeddings have mixed dimensions")]
    MixedDimensions { video_id: String },
    #[error("frame count mismatch: `{a}` has {a_frames}, `{b}` has {b_frames}")]
    FrameCount {
        a: String,
        a_frames: usize,
        b: String,
        b_frames: usize,
    },
    #[error("case `{0}` has no ground-truth video")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Embedding(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbeddingRecord {
    pub video_id: String,
    pub video_embedding: EmbeddingVector,
    pub frame_embeddings: Vec<EmbeddingVector>,
}

impl VideoEmbeddingRecord {
    pub fn new(
        video_id: impl Into<String>,
        video_embedding: EmbeddingVector,
        frame_embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self, MetricError> {
        let video_id = video_id.into();
        let dim = match frame_embeddings.first() {
            Some(f) => f.dim(),
            None => return Err(MetricError::NoFrames(video_id)),
        };
        if frame_embeddings.iter().any(|f| f.dim() != dim) {
            return Err(MetricError::MixedDimensions { video_id });
        }
        Ok(Self {
            video_id,
            video_embedding,
            frame_embeddings,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_embeddings.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCase {
    pub case_id: String,
    pub edited: VideoEmbeddingRecord,
    pub source: VideoEmbeddingRecord,
    pub target_prompt_embedding: EmbeddingVector,
    pub source_prompt_embedding: EmbeddingVector,
    pub ground_truth: Option<VideoEmbeddingRecord>,
}

/// Per-case Vid-Acc ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptComparison {
    pub target_similarity: f64,
    pub source_similarity: f64,
}

impl PromptComparison {
    pub fn passed(&self) -> bool {
        self.target_similarity > self.source_similarity
    }
}

pub fn compare_prompts(case: &MetricCase) -> Result<PromptComparison, MetricError> {
    let v = &case.edited.video_embedding;
    Ok(PromptComparison {
        target_similarity: cosine(v, &case.target_prompt_embedding)?,
        source_similarity: cosine(v, &case.source_prompt_embedding)?,
    })
}

pub fn vid_acc(cases: &[MetricCase]) -> Result<f64, MetricError> {
    if cases.is_empty() {
        return Err(MetricError::NoCases);
    }
    let mut passed = 0usize;
    for case in cases {
        if compare_prompts(case)?.passed() {
            passed += 1;
        }
    }
    Ok(passed as f64 / cases.len() as f64)
}

fn framewise_mean(a: &VideoEmbeddingRecord, b: &VideoEmbeddingRecord) -> Result<f64, MetricError> {
    if a.frames() != b.frames() {
        return Err(MetricError::FrameCount {
            a: a.video_id.clone(),
            a_frames: a.frames(),
            b: b.video_id.clone(),
            b_frames: b.frames(),
        });
    }
    let mut total = 0.0;
    for (x, y) in a.frame_embeddings.iter().zip(&b.frame_embeddings) {
        total += cosine(x, y)?;
    }
    Ok(total / a.frames() as f64)
}

pub fn vid_con(edited: &VideoEmbeddingRecord, source: &VideoEmbeddingRecord) -> Result<f64, MetricError> {
    framewise_mean(edited, source)
}

pub fn gt_con(
    edited: &VideoEmbeddingRecord,
    ground_truth: Option<&VideoEmbeddingRecord>,
) -> Result<f64, MetricError> {
    let gt = ground_truth.ok_or_else(|| MetricError::MissingGroundTruth(edited.video_id.clone()))?;
    framewise_mean(edited, gt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    pub comparison: PromptComparison,
    pub vid_con: f64,
    pub gt_con: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub cases: Vec<CaseMetrics>,
    pub vid_acc: f64,
    pub vid_con: f64,
    /// Mean over the cases that carry ground truth; `None` when none do.
    pub gt_con: Option<f64>,
}

/// All three metrics, per case and aggregated.
pub fn evaluate(cases: &[MetricCase]) -> Result<MetricSummary, MetricError> {
    if cases.is_empty() {
        return Err(MetricError::NoCases);
    }
    let per_case = cases
        .iter()
        .map(|c| {
            Ok(CaseMetrics {
                case_id: c.case_id.clone(),
                comparison: compare_prompts(c)?,
                vid_con: vid_con(&c.edited, &c.source)?,
                gt_con: match &c.ground_truth {
                    Some(gt) => Some(gt_con(&c.edited, Some(gt))?),
                    None => None,
                },
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let n = per_case.len() as f64;
    let vid_acc = per_case.iter().filter(|c| c.comparison.passed()).count() as f64 / n;
    let vid_con = per_case.iter().map(|c| c.vid_con).sum::<f64>() / n;
    let gts: Vec<f64> = per_case.iter().filter_map(|c| c.gt_con).collect();
    let gt_con = (!gts.is_empty()).then(|| gts.iter().sum::<f64>() / gts.len() as f64);
    Ok(MetricSummary {
        cases: per_case,
        vid_acc,
        vid_con,
        gt_con,
    })
}
