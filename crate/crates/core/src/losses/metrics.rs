use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::triangle::{corner_angle, face_angles};
use crate::error::{Error, Result};
use crate::geometry::{knn_self, unique_edges};

/// Neighbors per point for the edge graph of point-cloud evaluation.
pub const POINT_GRAPH_K: usize = 6;

/// Texture coordinates of a triangulated surface: every face corner refers
/// to a row of `uv`, and every face belongs to one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct UvLayout {
    pub uv: Array2<f64>,
    pub corners: Vec<[usize; 3]>,
    pub face_chart: Vec<usize>,
    /// Chart of every vertex, when known.
    pub vertex_chart: Option<Vec<usize>>,
    /// Vertices flagged as seam points.
    pub seam_vertices: Vec<usize>,
}

impl UvLayout {
    /// One chart, one UV row per vertex.
    pub fn single_chart(uv: Array2<f64>, faces: &[[usize; 3]], seams: Vec<usize>) -> Self {
        UvLayout {
            uv,
            corners: faces.to_vec(),
            face_chart: vec![0; faces.len()],
            vertex_chart: None,
            seam_vertices: seams,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartMetrics {
    pub chart: usize,
    pub vertices: usize,
    pub faces: usize,
    pub conformal: f64,
    pub isometric: f64,
    pub flipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    /// Mean absolute angle difference in radians; absent without faces.
    pub conformal: Option<f64>,
    pub equiareal: Option<f64>,
    pub isometric: f64,
    pub flipped: usize,
    pub charts: usize,
    pub seam_length: f64,
    pub vertices: usize,
    pub faces: usize,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_chart: Option<Vec<ChartMetrics>>,
}

impl DistortionReport {
    pub fn with_run(mut self, iterations: usize, wall_seconds: f64, seed: u64) -> Self {
        self.iterations = iterations;
        self.wall_seconds = wall_seconds;
        self.seed = seed;
        self
    }

    /// True when every metric field (not the run bookkeeping) is identical.
    pub fn same_metrics(&self, other: &DistortionReport) -> bool {
        let strip = |r: &DistortionReport| DistortionReport {
            iterations: 0,
            wall_seconds: 0.0,
            seed: 0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist3(p: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    (0..3).map(|d| (p[[i, d]] - p[[j, d]]).powi(2)).sum::<f64>().sqrt()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean of `(l3 - c * l2)^2` with the least-squares scale `c`.
fn scaled_length_error(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let num: f64 = pairs.iter().map(|(l3, l2)| l3 * l2).sum();
    let den: f64 = pairs.iter().map(|(_, l2)| l2 * l2).sum();
    let c = if den > 0.0 { num / den } else { 0.0 };
    pairs.iter().map(|(l3, l2)| (l3 - c * l2).powi(2)).sum::<f64>() / pairs.len() as f64
}

/// Distortion of a UV layout of a triangle mesh (positions `p`).
pub fn evaluate(p: ArrayView2<f64>, faces: &[[usize; 3]], layout: &UvLayout) -> Result<DistortionReport> {
    let v = p.nrows();
    if layout.corners.len() != faces.len() || layout.face_chart.len() != faces.len() {
        return Err(Error::Argument("layout does not cover every face".into()));
    }
    if let Some(bad) = layout.corners.iter().flatten().find(|&&c| c >= layout.uv.nrows()) {
        return Err(Error::Argument(format!("missing UV row {bad}")));
    }
    if let Some(vc) = &layout.vertex_chart {
        if vc.len() != v {
            return Err(Error::Argument("vertex charts do not cover every vertex".into()));
        }
    }
    if layout.uv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite UV coordinates".into()));
    }
    let uv = |c: usize| [layout.uv[[c, 0]], layout.uv[[c, 1]]];
    let theta = face_angles(p, faces);

    // per-chart accumulators, keyed in ascending chart order
    #[derive(Default)]
    struct Acc {
        angle_sum: f64,
        corners: usize,
        faces: usize,
        areas: Vec<f64>,
        edges: BTreeMap<(usize, usize), (f64, f64)>,
    }
    let mut charts: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut area3 = Vec::with_capacity(faces.len());
    let mut area2 = Vec::with_capacity(faces.len());
    let mut angle_total = 0.0;
    for (t, f) in faces.iter().enumerate() {
        let c = layout.corners[t];
        let acc = charts.entry(layout.face_chart[t]).or_default();
        for k in 0..3 {
            let (a, b, cc) = (uv(c[k]), uv(c[(k + 1) % 3]), uv(c[(k + 2) % 3]));
            let term = match (theta[t][k], corner_angle(&a, &b, &cc)) {
                (Some(th), Some(beta)) => (th - beta).abs(),
                _ => PI,
            };
            angle_total += term;
            acc.angle_sum += term;
            acc.corners += 1;
            let (i, j) = (f[k], f[(k + 1) % 3]);
            let key = (i.min(j), i.max(j));
            acc.edges.entry(key).or_insert((dist3(p, i, j), dist2(uv(c[k]), uv(c[(k + 1) % 3]))));
        }
        let s = signed_area(uv(c[0]), uv(c[1]), uv(c[2]));
        acc.areas.push(s);
        acc.faces += 1;
        area2.push(s.abs());
        area3.push(crate::geometry::triangle_area(p, *f));
    }

    let mut flipped = 0;
    let mut per_chart = Vec::new();
    let mut all_pairs = Vec::new();
    let mut iso_weighted = 0.0;
    for (&chart, acc) in &charts {
        let pos = acc.areas.iter().filter(|&&a| a > 0.0).count();
        let neg = acc.areas.iter().filter(|&&a| a < 0.0).count();
        // zero-area triangles never agree with the majority
        let chart_flipped = acc.faces - pos.max(neg);
        flipped += chart_flipped;
        let pairs: Vec<(f64, f64)> = acc.edges.values().copied().collect();
        let iso = scaled_length_error(&pairs);
        iso_weighted += iso * pairs.len() as f64;
        all_pairs.extend(pairs);
        let verts: BTreeSet<usize> = faces
            .iter()
            .zip(&layout.face_chart)
            .filter(|(_, &fc)| fc == chart)
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        per_chart.push(ChartMetrics {
            chart,
            vertices: verts.len(),
            faces: acc.faces,
            conformal: acc.angle_sum / acc.corners as f64,
            isometric: iso,
            flipped: chart_flipped,
        });
    }
    let isometric = if all_pairs.is_empty() {
        0.0
    } else {
        iso_weighted / all_pairs.len() as f64
    };

    let (s3, s2): (f64, f64) = (area3.iter().sum(), area2.iter().sum());
    let equiareal = if faces.is_empty() || s3 <= 0.0 {
        None
    } else {
        let frac2 = |a: f64| if s2 > 0.0 { a / s2 } else { 0.0 };
        Some(area3.iter().zip(&area2).map(|(a3, a2)| (frac2(*a2) - a3 / s3).powi(2)).sum::<f64>() / faces.len() as f64)
    };

    let chart_count = match &layout.vertex_chart {
        Some(vc) => vc.iter().collect::<BTreeSet<_>>().len(),
        None => charts.len(),
    };
    let seam_length = seam_length(p, &unique_edges(faces), layout.vertex_chart.as_deref(), &layout.seam_vertices, v);

    Ok(DistortionReport {
        conformal: (!faces.is_empty()).then(|| angle_total / (3 * faces.len()) as f64),
        equiareal,
        isometric,
        flipped,
        charts: chart_count,
        seam_length,
        vertices: v,
        faces: faces.len(),
        iterations: 0,
        wall_seconds: 0.0,
        seed: 0,
        per_chart: (layout.vertex_chart.is_some() || charts.len() > 1).then_some(per_chart),
    })
}

/// 3D length of edges whose endpoints lie in different charts, plus edges
/// whose endpoints are both seam vertices.
pub fn seam_length(p: ArrayView2<f64>, edges: &[[usize; 2]], labels: Option<&[usize]>, seams: &[usize], v: usize) -> f64 {
    let mut flag = vec![false; v];
    for &s in seams {
        if s < v {
            flag[s] = true;
        }
    }
    edges
        .iter()
        .filter(|[i, j]| labels.is_some_and(|l| l[*i] != l[*j]) || (flag[*i] && flag[*j]))
        .map(|&[i, j]| dist3(p, i, j))
        .fold(0.0, |a, b| a + b) // `sum` of nothing is -0.0
}

/// Distortion of a point-cloud parameterization, measured on the symmetric
/// k-nearest-neighbor graph of the 3D points.
pub fn evaluate_points(p: ArrayView2<f64>, uv: ArrayView2<f64>, seams: &[usize]) -> Result<DistortionReport> {
    let v = p.nrows();
    if uv.nrows() != v {
        return Err(Error::Argument(format!("{} UV rows for {v} points", uv.nrows())));
    }
    if uv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite UV coordinates".into()));
    }
    let edges = point_graph(p)?;
    let pairs: Vec<(f64, f64)> = edges
        .iter()
        .map(|&[i, j]| (dist3(p, i, j), dist2([uv[[i, 0]], uv[[i, 1]]], [uv[[j, 0]], uv[[j, 1]]])))
        .collect();
    Ok(DistortionReport {
        conformal: None,
        equiareal: None,
        isometric: scaled_length_error(&pairs),
        flipped: 0,
        charts: 1,
        seam_length: seam_length(p, &edges, None, seams, v),
        vertices: v,
        faces: 0,
        iterations: 0,
        wall_seconds: 0.0,
        seed: 0,
        per_chart: None,
    })
}

/// Unique undirected edges of the 3D k-nearest-neighbor graph.
pub fn point_graph(p: ArrayView2<f64>) -> Result<Vec<[usize; 2]>> {
    let k = POINT_GRAPH_K.min(p.nrows().saturating_sub(1));
    if k == 0 {
        return Ok(Vec::new());
    }
    let nb = knn_self(p, k)?;
    let set: BTreeSet<[usize; 2]> = (0..p.nrows())
        .flat_map(|i| nb.neighbors(i).iter().map(move |&j| [i.min(j), i.max(j)]))
        .collect();
    Ok(set.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> (Array2<f64>, Vec<[usize; 3]>) {
        let p = Array2::from_shape_fn((n * n, 3), |(i, d)| match d {
            0 => (i / n) as f64 / (n - 1) as f64,
            1 => (i % n) as f64 / (n - 1) as f64,
            _ => 0.0,
        });
        let mut faces = Vec::new();
        for r in 0..n - 1 {
            for c in 0..n - 1 {
                let a = r * n + c;
                faces.push([a, a + n, a + 1]);
                faces.push([a + 1, a + n, a + n + 1]);
            }
        }
        (p, faces)
    }

    #[test]
    fn identity_planar_case_is_distortion_free() {
        let (p, faces) = grid(5);
        let uv = p.slice(ndarray::s![.., 0..2]).to_owned();
        let r = evaluate(p.view(), &faces, &UvLayout::single_chart(uv, &faces, vec![])).unwrap();
        assert!(r.conformal.unwrap() < 1e-7);
        assert!(r.isometric < 1e-24);
        assert!(r.equiareal.unwrap() < 1e-30);
        assert_eq!((r.flipped, r.charts, r.seam_length), (0, 1, 0.0));
    }

    #[test]
    fn uniform_scaling_changes_nothing_but_flip_does() {
        let (p, faces) = grid(4);
        let uv = p.slice(ndarray::s![.., 0..2]).mapv(|x| 3.0 * x);
        let r = evaluate(p.view(), &faces, &UvLayout::single_chart(uv.clone(), &faces, vec![])).unwrap();
        assert!(r.isometric < 1e-24);
        let mut folded = uv.clone();
        folded[[5, 0]] = 10.0;
        let r = evaluate(p.view(), &faces, &UvLayout::single_chart(folded, &faces, vec![])).unwrap();
        assert!(r.flipped > 0);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let p = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let uv = Array2::from_shape_fn((12, 2), |_| rng.random_range(-1.0..1.0));
        let faces: Vec<[usize; 3]> = (0..10).map(|i| [i, i + 1, i + 2]).collect();
        let r = evaluate(p.view(), &faces, &UvLayout::single_chart(uv.clone(), &faces, vec![])).unwrap();

        let mut conf = 0.0;
        let mut pos = 0;
        let mut a3 = vec![];
        let mut a2 = vec![];
        for f in &faces {
            let row3 = |i: usize| p.row(i).to_vec();
            let row2 = |i: usize| uv.row(i).to_vec();
            for k in 0..3 {
                let (i, j, l) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let ang = |a: &[f64], b: &[f64], c: &[f64]| {
                    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                    let w: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
                    let dot: f64 = u.iter().zip(&w).map(|(x, y)| x * y).sum();
                    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nw: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (dot / (nu * nw)).clamp(-1.0 + 1e-12, 1.0 - 1e-12).acos()
                };
                conf += (ang(&row3(i), &row3(j), &row3(l)) - ang(&row2(i), &row2(j), &row2(l))).abs();
            }
            let s = signed_area([uv[[f[0], 0]], uv[[f[0], 1]]], [uv[[f[1], 0]], uv[[f[1], 1]]], [uv[[f[2], 0]], uv[[f[2], 1]]]);
            if s > 0.0 {
                pos += 1;
            }
            a2.push(s.abs());
            a3.push(crate::geometry::triangle_area(p.view(), *f));
        }
        assert!((r.conformal.unwrap() - conf / 30.0).abs() < 1e-12);
        assert_eq!(r.flipped, pos.min(10 - pos));
        let (s3, s2): (f64, f64) = (a3.iter().sum(), a2.iter().sum());
        let eq = a3.iter().zip(&a2).map(|(x, y)| (y / s2 - x / s3).powi(2)).sum::<f64>() / 10.0;
        assert!((r.equiareal.unwrap() - eq).abs() < 1e-12);

        let edges = unique_edges(&faces);
        let l: Vec<(f64, f64)> = edges
            .iter()
            .map(|&[i, j]| {
                let l3 = (0..3).map(|d| (p[[i, d]] - p[[j, d]]).powi(2)).sum::<f64>().sqrt();
                let l2 = (0..2).map(|d| (uv[[i, d]] - uv[[j, d]]).powi(2)).sum::<f64>().sqrt();
                (l3, l2)
            })
            .collect();
        let c = l.iter().map(|(a, b)| a * b).sum::<f64>() / l.iter().map(|(_, b)| b * b).sum::<f64>();
        let iso = l.iter().map(|(a, b)| (a - c * b).powi(2)).sum::<f64>() / l.len() as f64;
        assert!((r.isometric - iso).abs() < 1e-12);
    }

    #[test]
    fn seam_length_counts_crossing_and_flagged_edges() {
        let p = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 2.0, 0.0]];
        let edges = vec![[0, 1], [0, 2], [1, 3], [2, 3]];
        assert_eq!(seam_length(p.view(), &edges, Some(&[0, 0, 1, 1]), &[], 4), 4.0);
        assert_eq!(seam_length(p.view(), &edges, None, &[2, 3], 4), 1.0);
    }

    #[test]
    fn missing_uv_row_is_an_argument_error() {
        let (p, faces) = grid(3);
        let layout = UvLayout::single_chart(Array2::zeros((4, 2)), &faces, vec![]);
        assert!(matches!(evaluate(p.view(), &faces, &layout), Err(Error::Argument(_))));
    }

    #[test]
    fn point_metrics_of_an_exact_flattening() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let p = Array2::from_shape_fn((60, 3), |(_, d)| if d == 2 { 0.0 } else { rng.random_range(0.0..1.0) });
        let uv = p.slice(ndarray::s![.., 0..2]).mapv(|x| 0.5 * x);
        let r = evaluate_points(p.view(), uv.view(), &[]).unwrap();
        assert!(r.isometric < 1e-24);
        assert!(r.conformal.is_none());
    }
}
