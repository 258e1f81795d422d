use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::geometry::SurfaceMesh;

/// Guard keeping `acos` arguments strictly inside `(-1, 1)`.
pub const ACOS_GUARD: f64 = 1e-12;
/// Edges shorter than this make a corner angle undefined.
pub const MIN_EDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriangleMode {
    Conformal,
    Isometric,
}

/// Angle at corner `a` of triangle `(a, b, c)` given as coordinate slices,
/// or `None` when an incident edge is degenerate.
pub fn corner_angle(a: &[f64], b: &[f64], c: &[f64]) -> Option<f64> {
    let (mut uu, mut vv, mut uv) = (0.0, 0.0, 0.0);
    for d in 0..a.len() {
        let u = b[d] - a[d];
        let v = c[d] - a[d];
        uu += u * u;
        vv += v * v;
        uv += u * v;
    }
    let (lu, lv) = (uu.sqrt(), vv.sqrt());
    if lu < MIN_EDGE || lv < MIN_EDGE {
        return None;
    }
    Some(clamped_cos(uv / (lu * lv)).acos())
}

fn clamped_cos(c: f64) -> f64 {
    c.clamp(-1.0 + ACOS_GUARD, 1.0 - ACOS_GUARD)
}

/// The three corner angles of every face (corner `k` at `f[k]`).
pub fn face_angles(points: ArrayView2<f64>, faces: &[[usize; 3]]) -> Vec<[Option<f64>; 3]> {
    let row = |i: usize| points.row(i).to_vec();
    faces
        .iter()
        .map(|f| {
            let (a, b, c) = (row(f[0]), row(f[1]), row(f[2]));
            [corner_angle(&a, &b, &c), corner_angle(&b, &c, &a), corner_angle(&c, &a, &b)]
        })
        .collect()
}

/// Angle of corner `a` in the plane and its gradient with respect to the
/// three 2D corner positions `(a, b, c)`.
fn planar_angle_grad(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<(f64, [[f64; 2]; 3])> {
    let u = [b[0] - a[0], b[1] - a[1]];
    let v = [c[0] - a[0], c[1] - a[1]];
    let uu = u[0] * u[0] + u[1] * u[1];
    let vv = v[0] * v[0] + v[1] * v[1];
    let (lu, lv) = (uu.sqrt(), vv.sqrt());
    if lu < MIN_EDGE || lv < MIN_EDGE {
        return None;
    }
    let raw = (u[0] * v[0] + u[1] * v[1]) / (lu * lv);
    let cos = clamped_cos(raw);
    let angle = cos.acos();
    if cos != raw {
        return Some((angle, [[0.0; 2]; 3]));
    }
    // d acos(c) = -dc / sin; dc/du = v/(|u||v|) - c u/|u|^2
    let k = -1.0 / (1.0 - cos * cos).sqrt();
    let mut gb = [0.0; 2];
    let mut gc = [0.0; 2];
    for d in 0..2 {
        gb[d] = k * (v[d] / (lu * lv) - cos * u[d] / uu);
        gc[d] = k * (u[d] / (lu * lv) - cos * v[d] / vv);
    }
    let ga = [-gb[0] - gc[0], -gb[1] - gc[1]];
    Some((angle, [ga, gb, gc]))
}

/// Mean absolute angle difference over all `3T` corners between the 3D
/// triangles and their UV images, with its gradient in `q`. Corners whose
/// UV angle is undefined contribute `pi` and no gradient.
pub fn conformal_tdl_grad(vertices: ArrayView2<f64>, faces: &[[usize; 3]], q: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let theta = face_angles(vertices, faces);
    conformal_tdl_grad_with(&theta, faces, q)
}

/// As [`conformal_tdl_grad`] with precomputed 3D angles.
pub fn conformal_tdl_grad_with(theta: &[[Option<f64>; 3]], faces: &[[usize; 3]], q: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(q.raw_dim());
    if faces.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / (3 * faces.len()) as f64;
    let pt = |i: usize| [q[[i, 0]], q[[i, 1]]];
    let mut total = 0.0;
    for (f, th) in faces.iter().zip(theta) {
        for k in 0..3 {
            let (ia, ib, ic) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let th = th[k].unwrap_or(0.0);
            match planar_angle_grad(pt(ia), pt(ib), pt(ic)) {
                None => total += PI,
                Some((beta, g)) => {
                    let diff = th - beta;
                    total += diff.abs();
                    // d|th - beta|/d beta = -sign(th - beta)
                    let s = if diff > 0.0 {
                        -1.0
                    } else if diff < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    for (idx, gi) in [ia, ib, ic].into_iter().zip(g) {
                        grad[[idx, 0]] += inv * s * gi[0];
                        grad[[idx, 1]] += inv * s * gi[1];
                    }
                }
            }
        }
    }
    (total * inv, grad)
}

/// Score-weighted squared edge-length mismatch over every edge of every face
/// (`3T` terms, averaged). Each edge's score is the mean of its endpoint
/// scores, 1 when `scores` is `None`. Returns gradients for `q` and, when
/// scores are given, for the scores.
pub fn isometric_tdl_grad(
    vertices: ArrayView2<f64>,
    faces: &[[usize; 3]],
    q: ArrayView2<f64>,
    scores: Option<&[f64]>,
) -> (f64, Array2<f64>, Vec<f64>) {
    let mut grad = Array2::zeros(q.raw_dim());
    let mut gs = vec![0.0; if scores.is_some() { q.nrows() } else { 0 }];
    if faces.is_empty() {
        return (0.0, grad, gs);
    }
    let inv = 1.0 / (3 * faces.len()) as f64;
    let mut total = 0.0;
    for f in faces {
        for k in 0..3 {
            let (i, j) = (f[k], f[(k + 1) % 3]);
            let l3 = (0..3).map(|d| (vertices[[i, d]] - vertices[[j, d]]).powi(2)).sum::<f64>().sqrt();
            let dq = [q[[i, 0]] - q[[j, 0]], q[[i, 1]] - q[[j, 1]]];
            let l2 = (dq[0] * dq[0] + dq[1] * dq[1]).sqrt();
            let diff = l3 - l2;
            let s = scores.map_or(1.0, |s| 0.5 * (s[i] + s[j]));
            total += s * diff * diff;
            if scores.is_some() {
                gs[i] += 0.5 * inv * diff * diff;
                gs[j] += 0.5 * inv * diff * diff;
            }
            if l2 > 0.0 {
                let c = -2.0 * s * diff * inv / l2;
                for d in 0..2 {
                    grad[[i, d]] += c * dq[d];
                    grad[[j, d]] -= c * dq[d];
                }
            }
        }
    }
    (total * inv, grad, gs)
}

pub fn triangle_distortion_loss(mesh: &SurfaceMesh, q: ArrayView2<f64>, mode: TriangleMode, scores: Option<&[f64]>) -> f64 {
    match mode {
        TriangleMode::Conformal => conformal_tdl_grad(mesh.vertices.view(), &mesh.faces, q).0,
        TriangleMode::Isometric => isometric_tdl_grad(mesh.vertices.view(), &mesh.faces, q, scores).0,
    }
}
