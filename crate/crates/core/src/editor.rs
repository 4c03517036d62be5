//! Detection ingestion, detection-to-person assignment and pose replacement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose_model::{keypoint_bbox, BoundingBox, PoseFrame, PoseVideo};
use crate::procrustes::{apply_transform, solve_similarity, AlignError, KeypointSet, SimilarityTransform2D};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("detection parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("alignment of instance {instance_id} failed: {source}")]
    Align {
        instance_id: u32,
        #[source]
        source: AlignError,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("instance {0} is not present in the first source frame")]
    UnknownInstance(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub phrase: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub frame_index: u32,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    /// Indices of detections whose box leaves `[0, width] x [0, height]`.
    pub fn out_of_bounds(&self, width: u32, height: u32) -> Vec<usize> {
        self.detections
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.bbox.within(width, height))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    phrase: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectionSet {
    frame_index: u32,
    detections: Vec<RawDetection>,
}

/// Parses `{"frame_index": n, "detections": [{"phrase", "box": [x0, y0, x1, y1], "score"}]}`.
pub fn parse_detections(text: &str) -> Result<DetectionSet, EditError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawDetectionSet = serde_path_to_error::deserialize(de).map_err(|e| EditError::Parse {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let detections = raw
        .detections
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let [x0, y0, x1, y1] = d.bbox;
            let bbox = BoundingBox::new(x0, y0, x1, y1).map_err(|e| EditError::Parse {
                path: format!("detections[{i}].box"),
                message: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(EditError::Parse {
                    path: format!("detections[{i}].score"),
                    message: format!("score {} outside [0, 1]", d.score),
                });
            }
            Ok(Detection {
                phrase: d.phrase,
                bbox,
                score: d.score,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DetectionSet {
        frame_index: raw.frame_index,
        detections,
    })
}

/// Intersection over union. Zero whenever the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Assignment {
    /// `(detection index, instance_id)` in selection order.
    pub pairs: Vec<(usize, u32)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_instances: Vec<u32>,
}

impl Assignment {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn matched_instances(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs.iter().map(|&(_, id)| id)
    }
}

/// Greedy one-to-one matching: repeatedly takes the globally highest-IoU
/// `(detection, instance)` pair with IoU at or above `threshold`. Ties go to
/// the lower detection index, then the lower instance id. Instances without
/// visible keypoints have no box and stay unmatched.
pub fn assign_detections(d: &DetectionSet, frame: &PoseFrame, threshold: f64) -> Assignment {
    let boxes: Vec<(u32, Option<BoundingBox>)> = frame
        .instances
        .iter()
        .map(|inst| (inst.instance_id, keypoint_bbox(inst).ok()))
        .collect();

    let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
    for (di, det) in d.detections.iter().enumerate() {
        for &(id, bbox) in &boxes {
            if let Some(b) = bbox {
                let score = iou(&det.bbox, &b);
                if score >= threshold && score > 0.0 {
                    candidates.push((score, di, id));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut det_used = vec![false; d.detections.len()];
    let mut inst_used: Vec<u32> = Vec::new();
    let mut pairs = Vec::new();
    for (_, di, id) in candidates {
        if det_used[di] || inst_used.contains(&id) {
            continue;
        }
        det_used[di] = true;
        inst_used.push(id);
        pairs.push((di, id));
    }

    let unmatched_detections = (0..d.detections.len()).filter(|&i| !det_used[i]).collect();
    let mut unmatched_instances: Vec<u32> = boxes
        .iter()
        .map(|&(id, _)| id)
        .filter(|id| !inst_used.contains(id))
        .collect();
    unmatched_instances.sort_unstable();
    Assignment {
        pairs,
        unmatched_detections,
        unmatched_instances,
    }
}

/// Endpoint-aligned nearest-index map from position `i` of an `n_out`-long
/// sequence onto an `n_in`-long one. Position 0 always maps to 0 and the
/// last position to the last; equal lengths map identically.
pub fn resample_index(i: usize, n_out: usize, n_in: usize) -> usize {
    assert!(n_in > 0 && n_out > 0 && i < n_out);
    if n_out == 1 {
        return 0;
    }
    // round(i * (n_in - 1) / (n_out - 1)), halves rounded up
    let num = 2 * i * (n_in - 1) + (n_out - 1);
    num / (2 * (n_out - 1))
}

/// Result of a pose edit with the fitted transform per edited person.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedVideo {
    pub video: PoseVideo,
    pub transforms: Vec<(u32, SimilarityTransform2D)>,
}

/// Replaces every matched person with the retrieved pose, aligned to that
/// person's own first-frame keypoints.
pub fn edit_pose_video(
    source: &PoseVideo,
    assignment: &Assignment,
    retrieved: &PoseVideo,
) -> Result<PoseVideo, EditError> {
    edit_pose_video_detailed(source, assignment, retrieved).map(|e| e.video)
}

pub fn edit_pose_video_detailed(
    source: &PoseVideo,
    assignment: &Assignment,
    retrieved: &PoseVideo,
) -> Result<EditedVideo, EditError> {
    if assignment.is_empty() {
        return Ok(EditedVideo {
            video: source.clone(),
            transforms: Vec::new(),
        });
    }
    if retrieved.frames.is_empty() {
        return Err(EditError::Shape("retrieved pose video has no frames".into()));
    }
    if let Some(f) = retrieved.frames.iter().find(|f| f.instances.len() != 1) {
        return Err(EditError::Shape(format!(
            "retrieved frame {} has {} instances, expected exactly 1",
            f.frame_index,
            f.instances.len()
        )));
    }
    if retrieved.skeleton.len() != source.skeleton.len() {
        return Err(EditError::Shape(format!(
            "skeleton sizes differ: source {} joints, retrieved {}",
            source.skeleton.len(),
            retrieved.skeleton.len()
        )));
    }
    let first = source
        .frames
        .first()
        .ok_or_else(|| EditError::Shape("source pose video has no frames".into()))?;

    let x_pd = KeypointSet::from_instance(&retrieved.frames[0].instances[0]);
    let n_out = source.frames.len();
    let n_in = retrieved.frames.len();

    let mut out = source.clone();
    let mut transforms = Vec::new();
    for instance_id in assignment.matched_instances() {
        let anchor = first
            .instance(instance_id)
            .ok_or(EditError::UnknownInstance(instance_id))?;
        let x_ps = KeypointSet::from_instance(anchor);
        let tr = solve_similarity(&x_ps, &x_pd)
            .map_err(|source| EditError::Align { instance_id, source })?;
        let aligned = apply_transform(&tr, retrieved);
        for (i, frame) in out.frames.iter_mut().enumerate() {
            let j = resample_index(i, n_out, n_in);
            if let Some(inst) = frame
                .instances
                .iter_mut()
                .find(|inst| inst.instance_id == instance_id)
            {
                inst.keypoints = aligned.frames[j].instances[0].keypoints.clone();
            }
        }
        transforms.push((instance_id, tr));
    }
    Ok(EditedVideo {
        video: out,
        transforms,
    })
}
