//! Similarity Procrustes alignment of 2D keypoint sets.
//!
//! Finds the scale `s > 0`, proper rotation `R` and translation `t` that
//! minimize `sum ||ps_i - (s R pd_i + t)||^2` over corresponding usable
//! points, then applies that transform to whole pose videos.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::pose_model::{PoseInstance, PoseVideo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("keypoint sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("scale undefined: all usable target points coincide")]
    ScaleUndefined,
}

/// Ordered 2D points with a per-point usable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl KeypointSet {
    pub fn new(points: Vec<[f64; 2]>, mask: Vec<bool>) -> Result<Self, AlignError> {
        if points.len() != mask.len() {
            return Err(AlignError::LengthMismatch(points.len(), mask.len()));
        }
        Ok(Self { points, mask })
    }

    /// All points usable.
    pub fn from_points(points: Vec<[f64; 2]>) -> Self {
        let mask = vec![true; points.len()];
        Self { points, mask }
    }

    pub fn from_instance(instance: &PoseInstance) -> Self {
        Self {
            points: instance.keypoints.iter().map(|k| [k.x, k.y]).collect(),
            mask: instance.keypoints.iter().map(|k| k.visible).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `p -> scale * R(theta) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform2D {
    pub scale: f64,
    pub theta: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform2D {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            theta: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (sin, cos) = self.theta.sin_cos();
        Matrix2::new(cos, -sin, sin, cos)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.rotation() * Vector2::new(p[0], p[1]) * self.scale;
        [q.x + self.translation[0], q.y + self.translation[1]]
    }
}

/// Indices usable in both sets.
fn joint_usable(a: &KeypointSet, b: &KeypointSet) -> Result<Vec<usize>, AlignError> {
    if a.len() != b.len() {
        return Err(AlignError::LengthMismatch(a.len(), b.len()));
    }
    Ok((0..a.len()).filter(|&i| a.mask[i] && b.mask[i]).collect())
}

/// Closed-form least-squares similarity transform mapping `x_pd` onto `x_ps`.
///
/// Only correspondences usable in both sets participate. The rotation is
/// constrained to `det R = +1`; a reflected target therefore gets the best
/// proper rotation and a non-zero residual.
pub fn solve_similarity(
    x_ps: &KeypointSet,
    x_pd: &KeypointSet,
) -> Result<SimilarityTransform2D, AlignError> {
    let idx = joint_usable(x_ps, x_pd)?;
    if idx.len() < 2 {
        return Err(AlignError::Degenerate(format!(
            "{} usable correspondences, at least 2 required",
            idx.len()
        )));
    }
    let first = x_pd.points[idx[0]];
    if idx.iter().all(|&i| x_pd.points[i] == first) {
        return Err(AlignError::ScaleUndefined);
    }

    let n = idx.len() as f64;
    let vec = |p: [f64; 2]| Vector2::new(p[0], p[1]);
    let mu_ps = idx.iter().map(|&i| vec(x_ps.points[i])).sum::<Vector2<f64>>() / n;
    let mu_pd = idx.iter().map(|&i| vec(x_pd.points[i])).sum::<Vector2<f64>>() / n;

    let mut cov = Matrix2::zeros();
    let mut var_pd = 0.0;
    for &i in &idx {
        let a = vec(x_pd.points[i]) - mu_pd;
        let b = vec(x_ps.points[i]) - mu_ps;
        cov += b * a.transpose();
        var_pd += a.norm_squared();
    }
    if var_pd == 0.0 {
        return Err(AlignError::ScaleUndefined);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(AlignError::Degenerate("SVD did not converge".into())),
    };
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let correction = Matrix2::new(1.0, 0.0, 0.0, d);
    let rot = u * correction * v_t;
    let scale = (svd.singular_values[0] + d * svd.singular_values[1]) / var_pd;
    if scale <= 0.0 || !scale.is_finite() {
        return Err(AlignError::Degenerate(
            "no positive scale improves on collapsing the target".into(),
        ));
    }
    let t = mu_ps - rot * mu_pd * scale;
    Ok(SimilarityTransform2D {
        scale,
        theta: rot[(1, 0)].atan2(rot[(0, 0)]),
        translation: [t.x, t.y],
    })
}

/// Sum of squared distances between `x_ps` and the transformed `x_pd` over
/// jointly usable points.
pub fn residual(
    tr: &SimilarityTransform2D,
    x_ps: &KeypointSet,
    x_pd: &KeypointSet,
) -> Result<f64, AlignError> {
    let idx = joint_usable(x_ps, x_pd)?;
    Ok(idx
        .into_iter()
        .map(|i| {
            let q = tr.apply(x_pd.points[i]);
            let p = x_ps.points[i];
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        })
        .sum())
}

/// Maps every visible keypoint of every frame through `tr`. Invisible
/// keypoints, ids and frame indices are carried over untouched.
pub fn apply_transform(tr: &SimilarityTransform2D, v: &PoseVideo) -> PoseVideo {
    let mut out = v.clone();
    for frame in &mut out.frames {
        for inst in &mut frame.instances {
            for kp in inst.keypoints.iter_mut().filter(|k| k.visible) {
                let [x, y] = tr.apply([kp.x, kp.y]);
                kp.x = x;
                kp.y = y;
            }
        }
    }
    out
}
