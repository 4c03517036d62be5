//! `metrics`: embedding manifest in, text table and JSON report out.
//!
//! Manifest: an array of cases
//!
//! ```json
//! [{"case_id": "c1",
//!   "edited": {"video_id": "e", "video_embedding": "e/video.json",
//!              "frame_embeddings": ["e/f0.json", "e/f1.json"]},
//!   "source": {...},
//!   "target_prompt_embedding": "c1/target.json",
//!   "source_prompt_embedding": "c1/source.json",
//!   "ground_truth": {...}}]
//! ```
//!
//! Every path names an embedding document `{dim, values}` relative to the
//! manifest; `ground_truth` is optional.

use std::path::Path;

use posedit_core::metrics::{evaluate, MetricCase, MetricSummary, VideoEmbeddingRecord};
use posedit_core::pose_model::fixed6;
use posedit_core::retrieval::{parse_embedding, EmbeddingVector};
use serde::Deserialize;

use crate::error::{load, PipelineError, Result};
use crate::output::OutputSet;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVideo {
    video_id: String,
    video_embedding: String,
    frame_embeddings: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    case_id: String,
    edited: RawVideo,
    source: RawVideo,
    target_prompt_embedding: String,
    source_prompt_embedding: String,
    #[serde(default)]
    ground_truth: Option<RawVideo>,
}

fn embedding(root: &Path, rel: &str) -> Result<EmbeddingVector> {
    load("metrics", &root.join(rel), parse_embedding)
}

fn video(root: &Path, raw: &RawVideo) -> Result<VideoEmbeddingRecord> {
    let frames = raw
        .frame_embeddings
        .iter()
        .map(|p| embedding(root, p))
        .collect::<Result<Vec<_>>>()?;
    VideoEmbeddingRecord::new(raw.video_id.clone(), embedding(root, &raw.video_embedding)?, frames)
        .map_err(|e| PipelineError::parse("metrics", e))
}

pub fn load_cases(manifest: &Path) -> Result<Vec<MetricCase>> {
    let raw: Vec<RawCase> = load("metrics", manifest, |t| serde_json::from_str(t))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    raw.iter()
        .map(|c| {
            Ok(MetricCase {
                case_id: c.case_id.clone(),
                edited: video(root, &c.edited)?,
                source: video(root, &c.source)?,
                target_prompt_embedding: embedding(root, &c.target_prompt_embedding)?,
                source_prompt_embedding: embedding(root, &c.source_prompt_embedding)?,
                ground_truth: c.ground_truth.as_ref().map(|g| video(root, g)).transpose()?,
            })
        })
        .collect()
}

/// Fixed-width table. The GT-Con column appears only when some case has
/// ground truth; cases without it show `-`.
pub fn render_table(s: &MetricSummary) -> String {
    let with_gt = s.cases.iter().any(|c| c.gt_con.is_some());
    let width = s
        .cases
        .iter()
        .map(|c| c.case_id.len())
        .chain(["case".len(), "mean".len()])
        .max()
        .unwrap_or(4);
    let mut head = vec!["target_sim", "source_sim", "vid_acc", "vid_con"];
    if with_gt {
        head.push("gt_con");
    }
    let row = |name: &str, cells: Vec<String>| {
        let mut line = format!("{name:<width$}");
        for c in cells {
            line.push_str(&format!("  {c:>10}"));
        }
        line.push('\n');
        line
    };
    let mut out = row("case", head.iter().map(|h| h.to_string()).collect());
    for c in &s.cases {
        let mut cells = vec![
            fixed6(c.comparison.target_similarity),
            fixed6(c.comparison.source_similarity),
            if c.comparison.passed() { "1" } else { "0" }.to_string(),
            fixed6(c.vid_con),
        ];
        if with_gt {
            cells.push(c.gt_con.map(fixed6).unwrap_or_else(|| "-".into()));
        }
        out.push_str(&row(&c.case_id, cells));
    }
    let mut cells = vec!["".to_string(), "".to_string(), fixed6(s.vid_acc), fixed6(s.vid_con)];
    if let Some(g) = s.gt_con {
        cells.push(fixed6(g));
    }
    out.push_str(&row("mean", cells));
    out
}

/// JSON report with every real printed at six decimals.
pub fn render_json(s: &MetricSummary) -> String {
    let mut out = String::from("{\n  \"aggregate\": {\n");
    if let Some(g) = s.gt_con {
        out.push_str(&format!("    \"gt_con\": {},\n", fixed6(g)));
    }
    out.push_str(&format!("    \"vid_acc\": {},\n", fixed6(s.vid_acc)));
    out.push_str(&format!("    \"vid_con\": {}\n  }},\n", fixed6(s.vid_con)));
    out.push_str("  \"cases\": [");
    for (i, c) in s.cases.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(&format!(
            "    {{\"case_id\": {}, ",
            serde_json::to_string(&c.case_id).expect("string serializes")
        ));
        if let Some(g) = c.gt_con {
            out.push_str(&format!("\"gt_con\": {}, ", fixed6(g)));
        }
        out.push_str(&format!(
            "\"passed\": {}, \"source_similarity\": {}, \"target_similarity\": {}, \"vid_con\": {}}}",
            c.comparison.passed(),
            fixed6(c.comparison.source_similarity),
            fixed6(c.comparison.target_similarity),
            fixed6(c.vid_con)
        ));
    }
    out.push_str(if s.cases.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
    out
}

pub fn metrics_outputs(cases: &[MetricCase]) -> Result<OutputSet> {
    let summary = evaluate(cases).map_err(|e| PipelineError::stage("metrics", e))?;
    let mut out = OutputSet::new();
    out.add("metrics.txt", render_table(&summary));
    out.add("metrics.json", render_json(&summary));
    Ok(out)
}

pub fn run_metrics(manifest: &Path) -> Result<OutputSet> {
    metrics_outputs(&load_cases(manifest)?)
}
