//! Pose-video data model and its canonical text form.
//!
//! A pose video is an ordered list of frames, each holding zero or more
//! people (instances) with a fixed number of 2D keypoints. The interchange
//! format is a JSON document:
//!
//! ```text
//! {
//!   "frames": [{"frame_index": 0, "instances": [{"instance_id": 0, "keypoints": [{"x", "y", "visible", "confidence"}, ...]}]}],
//!   "height": 480,
//!   "label": "dance",            (optional)
//!   "skeleton": ["nose", ...],
//!   "width": 640
//! }
//! ```
//!
//! [`serialize_pose_video`] always emits the same bytes for equal videos:
//! keys in sorted order, coordinates and confidences as fixed-point numbers
//! with six decimals, and a trailing newline.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

/// Joint names of the 17-point COCO keypoint convention, in index order.
pub const COCO17_JOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("pose video parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("instance {instance_id} has no visible keypoints")]
    NoVisibleKeypoints { instance_id: u32 },
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max}): min exceeds max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

impl PoseError {
    fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        PoseError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// A single 2D joint. Coordinates of invisible keypoints are carried along
/// but ignored by every geometric operation.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
    pub confidence: f64,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            visible: true,
            confidence,
        }
    }

    pub fn hidden() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            visible: false,
            confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseInstance {
    pub instance_id: u32,
    pub keypoints: Vec<Keypoint>,
}

impl PoseInstance {
    pub fn visible_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.keypoints
            .iter()
            .filter(|k| k.visible)
            .map(|k| (k.x, k.y))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFrame {
    pub frame_index: u32,
    pub instances: Vec<PoseInstance>,
}

impl PoseFrame {
    pub fn instance(&self, instance_id: u32) -> Option<&PoseInstance> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }
}

/// Named joint list shared by every instance of a video.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct Skeleton {
    joints: Vec<String>,
}

impl Skeleton {
    pub fn new(joints: Vec<String>) -> Self {
        Self { joints }
    }

    pub fn coco17() -> Self {
        Self::new(COCO17_JOINTS.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::coco17()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseVideo {
    pub width: u32,
    pub height: u32,
    pub skeleton: Skeleton,
    pub frames: Vec<PoseFrame>,
    #[serde(default)]
    pub label: Option<String>,
}

/// Location of a keypoint inside a [`PoseVideo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointRef {
    pub frame_index: u32,
    pub instance_id: u32,
    pub joint: usize,
}

impl PoseVideo {
    /// Builds a video and checks every structural invariant.
    pub fn new(
        width: u32,
        height: u32,
        skeleton: Skeleton,
        frames: Vec<PoseFrame>,
        label: Option<String>,
    ) -> Result<Self, PoseError> {
        let v = Self {
            width,
            height,
            skeleton,
            frames,
            label,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if self.width == 0 {
            return Err(PoseError::parse("width", "must be positive"));
        }
        if self.height == 0 {
            return Err(PoseError::parse("height", "must be positive"));
        }
        if self.skeleton.is_empty() {
            return Err(PoseError::parse("skeleton", "must name at least one joint"));
        }
        let joints = self.skeleton.len();
        let mut prev: Option<u32> = None;
        for (fi, frame) in self.frames.iter().enumerate() {
            if let Some(p) = prev {
                if frame.frame_index <= p {
                    return Err(PoseError::parse(
                        format!("frames[{fi}].frame_index"),
                        format!(
                            "frame_index {} does not strictly increase after {}",
                            frame.frame_index, p
                        ),
                    ));
                }
            }
            prev = Some(frame.frame_index);
            let mut seen = HashSet::new();
            for (ii, inst) in frame.instances.iter().enumerate() {
                if !seen.insert(inst.instance_id) {
                    return Err(PoseError::parse(
                        format!("frames[{fi}].instances[{ii}].instance_id"),
                        format!("duplicate instance_id {} within frame", inst.instance_id),
                    ));
                }
                if inst.keypoints.len() != joints {
                    return Err(PoseError::parse(
                        format!("frames[{fi}].instances[{ii}].keypoints"),
                        format!(
                            "expected {joints} keypoints for the skeleton, found {}",
                            inst.keypoints.len()
                        ),
                    ));
                }
                for (ki, kp) in inst.keypoints.iter().enumerate() {
                    let path = format!("frames[{fi}].instances[{ii}].keypoints[{ki}]");
                    if !kp.x.is_finite() || !kp.y.is_finite() {
                        return Err(PoseError::parse(path, "coordinates must be finite"));
                    }
                    if !(0.0..=1.0).contains(&kp.confidence) {
                        return Err(PoseError::parse(
                            format!("{path}.confidence"),
                            format!("confidence {} outside [0, 1]", kp.confidence),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Visible keypoints lying outside `[0, width] x [0, height]`.
    ///
    /// These are accepted (aligned poses may leave the frame) and still
    /// count as visible for geometry.
    pub fn out_of_frame(&self) -> Vec<JointRef> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let mut out = Vec::new();
        for frame in &self.frames {
            for inst in &frame.instances {
                for (joint, kp) in inst.keypoints.iter().enumerate() {
                    if kp.visible && !(0.0 <= kp.x && kp.x <= w && 0.0 <= kp.y && kp.y <= h) {
                        out.push(JointRef {
                            frame_index: frame.frame_index,
                            instance_id: inst.instance_id,
                            joint,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Parses and validates a pose-video document.
pub fn parse_pose_video(text: &str) -> Result<PoseVideo, PoseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let video: PoseVideo = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        PoseError::parse(path, e.into_inner().to_string())
    })?;
    video.validate()?;
    Ok(video)
}

/// Renders a real number in the canonical six-decimal fixed-point form.
/// Negative zero collapses to `0.000000`.
pub fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Canonical serialization; see the module docs for the layout.
pub fn serialize_pose_video(v: &PoseVideo) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    if v.frames.is_empty() {
        out.push_str("  \"frames\": [],\n");
    } else {
        out.push_str("  \"frames\": [\n");
        for (fi, frame) in v.frames.iter().enumerate() {
            out.push_str("    {\n");
            let _ = writeln!(out, "      \"frame_index\": {},", frame.frame_index);
            if frame.instances.is_empty() {
                out.push_str("      \"instances\": []\n");
            } else {
                out.push_str("      \"instances\": [\n");
                for (ii, inst) in frame.instances.iter().enumerate() {
                    out.push_str("        {\n");
                    let _ = writeln!(out, "          \"instance_id\": {},", inst.instance_id);
                    out.push_str("          \"keypoints\": [\n");
                    for (ki, kp) in inst.keypoints.iter().enumerate() {
                        let _ = write!(
                            out,
                            "            {{\"confidence\": {}, \"visible\": {}, \"x\": {}, \"y\": {}}}",
                            fixed6(kp.confidence),
                            kp.visible,
                            fixed6(kp.x),
                            fixed6(kp.y)
                        );
                        out.push_str(if ki + 1 < inst.keypoints.len() { ",\n" } else { "\n" });
                    }
                    out.push_str("          ]\n");
                    out.push_str(if ii + 1 < frame.instances.len() {
                        "        },\n"
                    } else {
                        "        }\n"
                    });
                }
                out.push_str("      ]\n");
            }
            out.push_str(if fi + 1 < v.frames.len() {
                "    },\n"
            } else {
                "    }\n"
            });
        }
        out.push_str("  ],\n");
    }
    let _ = writeln!(out, "  \"height\": {},", v.height);
    if let Some(label) = &v.label {
        let _ = writeln!(out, "  \"label\": {},", json_str(label));
    }
    let names: Vec<String> = v.skeleton.joints().iter().map(|j| json_str(j)).collect();
    let _ = writeln!(out, "  \"skeleton\": [{}],", names.join(", "));
    let _ = writeln!(out, "  \"width\": {}", v.width);
    out.push_str("}\n");
    out
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, PoseError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(PoseError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= f64::from(width)
            && self.y_max <= f64::from(height)
    }
}

/// Tight min/max box over the visible keypoints of `instance`; no padding.
pub fn keypoint_bbox(instance: &PoseInstance) -> Result<BoundingBox, PoseError> {
    let mut pts = instance.visible_points();
    let (x0, y0) = pts.next().ok_or(PoseError::NoVisibleKeypoints {
        instance_id: instance.instance_id,
    })?;
    let init = BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x0,
        y_max: y0,
    };
    Ok(pts.fold(init, |b, (x, y)| BoundingBox {
        x_min: b.x_min.min(x),
        y_min: b.y_min.min(y),
        x_max: b.x_max.max(x),
        y_max: b.y_max.max(y),
    }))
}
