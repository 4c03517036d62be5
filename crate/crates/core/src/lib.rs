//! Algorithmic core of text-to-pose video editing.
//!
//! Every neural component (language model, detector, pose estimator, text
//! and video embedders, diffusion network) sits behind a file boundary; this
//! crate holds the deterministic math between those boundaries:
//!
//! - [`pose_model`]: pose-video data model, canonical serialization, boxes
//! - [`procrustes`]: similarity alignment of keypoint sets
//! - [`retrieval`]: action-pose database and cosine ranking
//! - [`editor`]: detection assignment and per-person pose replacement
//! - [`blend`]: timestep attention blending
//! - [`ddim`]: DDIM stepping, inversion and a toy sampler
//! - [`metrics`]: Vid-Acc, Vid-Con and GT-Con

pub mod blend;
pub mod ddim;
pub mod editor;
pub mod metrics;
pub mod pose_model;
pub mod procrustes;
pub mod retrieval;

pub use pose_model::{
    keypoint_bbox, parse_pose_video, serialize_pose_video, BoundingBox, Keypoint, PoseFrame,
    PoseInstance, PoseVideo, Skeleton,
};
pub use procrustes::{apply_transform, residual, solve_similarity, KeypointSet, SimilarityTransform2D};
