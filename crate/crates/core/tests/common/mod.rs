//! Reference implementations used as test oracles. They favour directness
//! over speed and share no code with the library.

#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixtures() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

pub fn read_fixture(rel: &str) -> String {
    let path = fixtures().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ------------------------------------------------------------ alignment

/// Sum of squared distances `|p_i - (s R(theta) q_i + t)|^2` over `idx`.
pub fn direct_residual(ps: &[[f64; 2]], pd: &[[f64; 2]], idx: &[usize], s: f64, theta: f64, t: [f64; 2]) -> f64 {
    let (c, sn) = (theta.cos(), theta.sin());
    let mut total = 0.0;
    for &i in idx {
        let q = pd[i];
        let x = s * (c * q[0] - sn * q[1]) + t[0];
        let y = s * (sn * q[0] + c * q[1]) + t[1];
        total += (ps[i][0] - x).powi(2) + (ps[i][1] - y).powi(2);
    }
    total
}

#[derive(Debug, Clone, Copy)]
pub struct GridFit {
    pub scale: f64,
    pub theta: f64,
    pub translation: [f64; 2],
    pub residual: f64,
}

/// Best non-negative scale and translation for a fixed angle.
fn fit_at(ps: &[[f64; 2]], pd: &[[f64; 2]], idx: &[usize], theta: f64) -> GridFit {
    let n = idx.len() as f64;
    let mut mp = [0.0; 2];
    let mut mq = [0.0; 2];
    for &i in idx {
        for k in 0..2 {
            mp[k] += ps[i][k] / n;
            mq[k] += pd[i][k] / n;
        }
    }
    let (c, sn) = (theta.cos(), theta.sin());
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in idx {
        let a = [pd[i][0] - mq[0], pd[i][1] - mq[1]];
        let b = [ps[i][0] - mp[0], ps[i][1] - mp[1]];
        let ra = [c * a[0] - sn * a[1], sn * a[0] + c * a[1]];
        num += b[0] * ra[0] + b[1] * ra[1];
        den += a[0] * a[0] + a[1] * a[1];
    }
    let s = (num / den).max(0.0);
    let t = [
        mp[0] - s * (c * mq[0] - sn * mq[1]),
        mp[1] - s * (sn * mq[0] + c * mq[1]),
    ];
    GridFit {
        scale: s,
        theta,
        translation: t,
        residual: direct_residual(ps, pd, idx, s, theta, t),
    }
}

/// Angle search: a 1e-3 grid over the circle, a 1e-5 grid around the best
/// cell, then golden-section refinement.
pub fn grid_procrustes(ps: &[[f64; 2]], pd: &[[f64; 2]], idx: &[usize]) -> GridFit {
    use std::f64::consts::PI;
    let mut best = fit_at(ps, pd, idx, -PI);
    let steps = (2.0 * PI / 1e-3).ceil() as usize;
    for k in 0..steps {
        let f = fit_at(ps, pd, idx, -PI + k as f64 * 1e-3);
        if f.residual < best.residual {
            best = f;
        }
    }
    let centre = best.theta;
    for k in 0..=200 {
        let f = fit_at(ps, pd, idx, centre - 1e-3 + k as f64 * 1e-5);
        if f.residual < best.residual {
            best = f;
        }
    }
    let (mut lo, mut hi) = (best.theta - 1e-5, best.theta + 1e-5);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if fit_at(ps, pd, idx, m1).residual < fit_at(ps, pd, idx, m2).residual {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let f = fit_at(ps, pd, idx, 0.5 * (lo + hi));
    if f.residual < best.residual {
        best = f;
    }
    best
}

// ------------------------------------------------------------ retrieval

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Selection sort by descending score; earlier entries win ties.
pub fn brute_force_rank(db: &[Vec<f64>], q: &[f64]) -> Vec<usize> {
    let scores: Vec<f64> = db.iter().map(|e| naive_cosine(e, q)).collect();
    let mut left: Vec<usize> = (0..db.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut pick = 0;
        for j in 1..left.len() {
            if scores[left[j]] > scores[left[pick]] {
                pick = j;
            }
        }
        order.push(left.remove(pick));
    }
    order
}

// ------------------------------------------------------------ assignment

pub fn naive_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Repeatedly takes the best remaining `(detection, instance)` pair:
/// highest IoU, then lowest detection index, then lowest instance id.
pub fn greedy_oracle(dets: &[[f64; 4]], insts: &[(u32, [f64; 4])], thr: f64) -> Vec<(usize, u32)> {
    let mut used_d = vec![false; dets.len()];
    let mut used_i = vec![false; insts.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (d, db) in dets.iter().enumerate() {
            if used_d[d] {
                continue;
            }
            for (k, (id, ib)) in insts.iter().enumerate() {
                if used_i[k] {
                    continue;
                }
                let s = naive_iou(*db, *ib);
                if s < thr || s <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bd, bk)) => s > bs || (s == bs && (d < bd || (d == bd && *id < insts[bk].0))),
                };
                if better {
                    best = Some((s, d, k));
                }
            }
        }
        match best {
            Some((_, d, k)) => {
                used_d[d] = true;
                used_i[k] = true;
                out.push((d, insts[k].0));
            }
            None => return out,
        }
    }
}

// ------------------------------------------------------------ ddim

/// Per-step multiplier of the denoising map for `eps = lambda z`:
/// `z_{t-1} = (a_t + b_t lambda) z_t`.
pub fn linear_step_factor(alpha_t: f64, alpha_prev: f64, lambda: f64) -> f64 {
    let a = (alpha_prev / alpha_t).sqrt();
    let b = (1.0 - alpha_prev).sqrt() - (alpha_prev * (1.0 - alpha_t) / alpha_t).sqrt();
    a + b * lambda
}

/// `z_t` for every `t` when inverting `z0` with `eps = lambda z`.
pub fn linear_inversion_closed_form(alphas: &[f64], z0: f64, lambda: f64) -> Vec<f64> {
    let mut out = vec![z0];
    for t in 1..alphas.len() {
        let prev = out[t - 1];
        out.push(prev / linear_step_factor(alphas[t], alphas[t - 1], lambda));
    }
    out
}

// ------------------------------------------------------------ metrics

pub struct CaseVectors {
    pub video: Vec<f64>,
    pub target: Vec<f64>,
    pub source_prompt: Vec<f64>,
    pub edited_frames: Vec<Vec<f64>>,
    pub source_frames: Vec<Vec<f64>>,
    pub gt_frames: Option<Vec<Vec<f64>>>,
}

pub struct StraightLine {
    pub vid_acc: f64,
    pub vid_con: f64,
    pub gt_con: Option<f64>,
}

pub fn straight_line_metrics(cases: &[CaseVectors]) -> StraightLine {
    let mut passed = 0.0;
    let mut con = 0.0;
    let mut gt_sum = 0.0;
    let mut gt_n = 0.0;
    for c in cases {
        if naive_cosine(&c.video, &c.target) > naive_cosine(&c.video, &c.source_prompt) {
            passed += 1.0;
        }
        let mut s = 0.0;
        for (a, b) in c.edited_frames.iter().zip(&c.source_frames) {
            s += naive_cosine(a, b);
        }
        con += s / c.edited_frames.len() as f64;
        if let Some(gt) = &c.gt_frames {
            let mut g = 0.0;
            for (a, b) in c.edited_frames.iter().zip(gt) {
                g += naive_cosine(a, b);
            }
            gt_sum += g / gt.len() as f64;
            gt_n += 1.0;
        }
    }
    let n = cases.len() as f64;
    StraightLine {
        vid_acc: passed / n,
        vid_con: con / n,
        gt_con: (gt_n > 0.0).then(|| gt_sum / gt_n),
    }
}
