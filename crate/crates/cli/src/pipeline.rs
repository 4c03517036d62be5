//! `align`, `retrieve` and `edit`.

use std::path::{Path, PathBuf};
use std::process::Command;

use posedit_core::editor::{
    assign_detections, edit_pose_video_detailed, iou, parse_detections, resample_index, Assignment,
    DetectionSet,
};
use posedit_core::retrieval::{
    build_index, parse_database_manifest, parse_embedding, query, EmbeddingVector, PoseDatabase,
    RankedMatch,
};
use posedit_core::{
    keypoint_bbox, parse_pose_video, residual, serialize_pose_video, solve_similarity, KeypointSet,
    PoseVideo, SimilarityTransform2D,
};
use serde::{Deserialize, Serialize};

use crate::answer::{parse_answer, AnswerRecord};
use crate::config::PipelineConfig;
use crate::error::{load, PipelineError, Result};
use crate::output::OutputSet;

pub const NO_MATCH_NOTE: &str = "no individuals matched";

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- align

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignInput {
    x_ps: Vec<[f64; 2]>,
    #[serde(default)]
    mask_ps: Option<Vec<bool>>,
    x_pd: Vec<[f64; 2]>,
    #[serde(default)]
    mask_pd: Option<Vec<bool>>,
}

#[derive(Debug, Serialize)]
struct TransformReport {
    scale: f64,
    theta: f64,
    translation: [f64; 2],
}

impl From<&SimilarityTransform2D> for TransformReport {
    fn from(t: &SimilarityTransform2D) -> Self {
        Self {
            scale: t.scale,
            theta: t.theta,
            translation: t.translation,
        }
    }
}

#[derive(Serialize)]
struct AlignReport {
    transform: TransformReport,
    residual: f64,
    points_used: usize,
    aligned: Vec<[f64; 2]>,
}

fn keypoint_set(points: Vec<[f64; 2]>, mask: Option<Vec<bool>>, name: &str) -> Result<KeypointSet> {
    match mask {
        Some(m) => KeypointSet::new(points, m)
            .map_err(|e| PipelineError::parse("align", format!("{name}: {e}"))),
        None => Ok(KeypointSet::from_points(points)),
    }
}

/// Solves `x_ps ~ s R x_pd + t` for a point-pair file
/// `{x_ps: [[x, y]], mask_ps?, x_pd: [[x, y]], mask_pd?}`.
pub fn align_outputs(text: &str) -> Result<OutputSet> {
    let input: AlignInput =
        serde_json::from_str(text).map_err(|e| PipelineError::parse("align", e))?;
    let ps = keypoint_set(input.x_ps, input.mask_ps, "x_ps")?;
    let pd = keypoint_set(input.x_pd, input.mask_pd, "x_pd")?;
    let tr = solve_similarity(&ps, &pd).map_err(|e| PipelineError::stage("align", e))?;
    let res = residual(&tr, &ps, &pd).map_err(|e| PipelineError::stage("align", e))?;
    let report = AlignReport {
        transform: (&tr).into(),
        residual: res,
        points_used: (0..ps.len()).filter(|&i| ps.mask[i] && pd.mask[i]).count(),
        aligned: pd.points.iter().map(|&p| tr.apply(p)).collect(),
    };
    let mut out = OutputSet::new();
    out.add("transform.json", pretty(&report));
    Ok(out)
}

pub fn run_align(input: &Path) -> Result<OutputSet> {
    align_outputs(&crate::error::read_text("align", input)?)
}

// ---------------------------------------------------------------- retrieve

/// Database plus the directory its relative pose-video paths hang off.
#[derive(Debug, Clone)]
pub struct LoadedDatabase {
    pub db: PoseDatabase,
    pub root: PathBuf,
}

impl LoadedDatabase {
    pub fn load(manifest: &Path) -> Result<Self> {
        let entries = load("retrieve", manifest, parse_database_manifest)?;
        let db = build_index(entries).map_err(|e| PipelineError::parse("retrieve", e))?;
        Ok(Self {
            db,
            root: manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }

    pub fn pose_video(&self, entry_id: &str) -> Result<PoseVideo> {
        let entry = self
            .db
            .get(entry_id)
            .ok_or_else(|| PipelineError::stage("retrieve", format!("unknown entry `{entry_id}`")))?;
        let path = self.root.join(&entry.pose_video_path);
        load("retrieve", &path, parse_pose_video)
    }
}

/// Embeds `text` with the configured external command: the text is passed
/// as the final argument and an embedding document is read from stdout.
pub fn run_embedder(command: &[String], text: &str) -> Result<EmbeddingVector> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| PipelineError::parse("embed", "embedder command is empty"))?;
    let output = Command::new(program)
        .args(args)
        .arg(text)
        .output()
        .map_err(|e| PipelineError::stage("embed", format!("cannot run `{program}`: {e}")))?;
    if !output.status.success() {
        return Err(PipelineError::stage(
            "embed",
            format!("`{program}` exited with {}", output.status),
        ));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    parse_embedding(&stdout).map_err(|e| PipelineError::parse("embed", e))
}

/// The query embedding file if given, else the embedder run on the action.
pub fn resolve_query(cfg: &PipelineConfig, answer: Option<&AnswerRecord>) -> Result<EmbeddingVector> {
    if let Some(path) = &cfg.paths.query_embedding {
        return load("retrieve", path, parse_embedding);
    }
    match (&cfg.embedder_command, answer) {
        (Some(cmd), Some(a)) => run_embedder(cmd, &a.action),
        _ => Err(PipelineError::parse(
            "config",
            "missing input: pass --query-embedding (or configure embedder_command with an answer)",
        )),
    }
}

#[derive(Serialize)]
struct RetrievedEntry<'a> {
    rank: usize,
    entry_id: &'a str,
    label: &'a str,
    score: f64,
    pose_video_path: &'a str,
}

fn retrieved_entries<'a>(db: &'a PoseDatabase, hits: &'a [RankedMatch]) -> Vec<RetrievedEntry<'a>> {
    hits.iter()
        .enumerate()
        .map(|(i, h)| {
            let e = &db.entries()[h.index];
            RetrievedEntry {
                rank: i + 1,
                entry_id: &e.entry_id,
                label: &e.label,
                score: h.score,
                pose_video_path: &e.pose_video_path,
            }
        })
        .collect()
}

pub fn retrieve_outputs(db: &PoseDatabase, q: &EmbeddingVector, top_k: usize) -> Result<OutputSet> {
    let hits = query(db, q, top_k).map_err(|e| PipelineError::stage("retrieve", e))?;
    let mut out = OutputSet::new();
    out.add("retrieval.json", pretty(&retrieved_entries(db, &hits)));
    Ok(out)
}

pub fn run_retrieve(cfg: &PipelineConfig) -> Result<OutputSet> {
    let db = LoadedDatabase::load(cfg.require(&cfg.paths.db, "db")?)?;
    let answer = match &cfg.paths.answer {
        Some(p) => Some(load("answer", p, parse_answer)?),
        None => None,
    };
    let q = resolve_query(cfg, answer.as_ref())?;
    retrieve_outputs(&db.db, &q, cfg.top_k)
}

// ---------------------------------------------------------------- edit

/// Keeps `count` frames picked by endpoint-aligned nearest index; shorter
/// videos are returned unchanged.
pub fn sample_frames(video: &PoseVideo, count: usize) -> PoseVideo {
    let n = video.frames.len();
    if n <= count {
        return video.clone();
    }
    let mut out = video.clone();
    out.frames = (0..count)
        .map(|i| video.frames[resample_index(i, count, n)].clone())
        .collect();
    out
}

pub struct EditInputs {
    pub source: PoseVideo,
    pub detections: DetectionSet,
    pub answer: AnswerRecord,
    pub db: LoadedDatabase,
    pub query: EmbeddingVector,
}

impl EditInputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let p = &cfg.paths;
        let source = load("source", cfg.require(&p.source, "source")?, parse_pose_video)?;
        let detections = load("detections", cfg.require(&p.detections, "detections")?, parse_detections)?;
        let answer = load("answer", cfg.require(&p.answer, "answer")?, parse_answer)?;
        let db = LoadedDatabase::load(cfg.require(&p.db, "db")?)?;
        let query = resolve_query(cfg, Some(&answer))?;
        Ok(Self {
            source,
            detections,
            answer,
            db,
            query,
        })
    }
}

#[derive(Serialize)]
struct MatchedPair<'a> {
    detection: usize,
    phrase: &'a str,
    instance_id: u32,
    iou: f64,
}

#[derive(Serialize)]
struct AssignmentReport<'a> {
    threshold: f64,
    pairs: Vec<MatchedPair<'a>>,
    unmatched_detections: &'a [usize],
    unmatched_instances: &'a [u32],
}

#[derive(Serialize)]
struct InstanceTransform {
    instance_id: u32,
    #[serde(flatten)]
    transform: TransformReport,
}

#[derive(Serialize)]
struct EditResult<'a> {
    #[serde(flatten)]
    entry: RetrievedEntry<'a>,
    output: String,
    transforms: Vec<InstanceTransform>,
}

#[derive(Serialize)]
struct EditReport<'a> {
    answer: &'a AnswerRecord,
    frame_count: usize,
    source_frames: usize,
    edited_frames: usize,
    assignment: AssignmentReport<'a>,
    results: Vec<EditResult<'a>>,
    notes: Vec<String>,
}

pub fn output_name(rank: usize, top_k: usize) -> String {
    if top_k == 1 {
        "edited_pose_video.json".to_string()
    } else {
        format!("edited_pose_video_rank{rank}.json")
    }
}

/// Retrieval, assignment and pose replacement, one edited video per hit.
pub fn edit_outputs(cfg: &PipelineConfig, inputs: &EditInputs) -> Result<OutputSet> {
    let sampled = sample_frames(&inputs.source, cfg.frame_count);
    let first = sampled
        .frames
        .first()
        .ok_or_else(|| PipelineError::stage("edit", "source pose video has no frames"))?;
    let dets = &inputs.detections;
    if dets.frame_index != first.frame_index {
        return Err(PipelineError::stage(
            "assign",
            format!(
                "detections refer to frame {}, but the first source frame is {}",
                dets.frame_index, first.frame_index
            ),
        ));
    }

    let mut notes = Vec::new();
    for i in dets.out_of_bounds(sampled.width, sampled.height) {
        notes.push(format!("detection {i} extends outside the {}x{} frame", sampled.width, sampled.height));
    }
    let assignment: Assignment = assign_detections(dets, first, cfg.iou_threshold);
    if assignment.is_empty() {
        notes.push(NO_MATCH_NOTE.to_string());
    }
    let pairs = assignment
        .pairs
        .iter()
        .map(|&(d, id)| {
            let inst = first.instance(id).expect("assigned instances exist");
            let b = keypoint_bbox(inst).expect("assigned instances have a box");
            MatchedPair {
                detection: d,
                phrase: &dets.detections[d].phrase,
                instance_id: id,
                iou: iou(&dets.detections[d].bbox, &b),
            }
        })
        .collect();

    let db = &inputs.db;
    let hits = query(&db.db, &inputs.query, cfg.top_k).map_err(|e| PipelineError::stage("retrieve", e))?;
    let entries = retrieved_entries(&db.db, &hits);

    let mut out = OutputSet::new();
    let mut results = Vec::new();
    for entry in entries {
        let retrieved = db.pose_video(entry.entry_id)?;
        let edited = edit_pose_video_detailed(&sampled, &assignment, &retrieved)
            .map_err(|e| PipelineError::stage("edit", format!("entry `{}`: {e}", entry.entry_id)))?;
        let name = output_name(entry.rank, cfg.top_k);
        out.add(name.clone(), serialize_pose_video(&edited.video));
        results.push(EditResult {
            entry,
            output: name,
            transforms: edited
                .transforms
                .iter()
                .map(|(id, t)| InstanceTransform {
                    instance_id: *id,
                    transform: t.into(),
                })
                .collect(),
        });
    }

    let report = EditReport {
        answer: &inputs.answer,
        frame_count: cfg.frame_count,
        source_frames: inputs.source.frames.len(),
        edited_frames: sampled.frames.len(),
        assignment: AssignmentReport {
            threshold: cfg.iou_threshold,
            pairs,
            unmatched_detections: &assignment.unmatched_detections,
            unmatched_instances: &assignment.unmatched_instances,
        },
        results,
        notes,
    };
    out.add("report.json", pretty(&report));
    Ok(out)
}

pub fn run_edit(cfg: &PipelineConfig) -> Result<OutputSet> {
    edit_outputs(cfg, &EditInputs::load(cfg)?)
}
