//! Result files: UV OBJ, seam/chart sidecars, SVG layouts, and evaluation
//! of an exported OBJ.
//!
//! Floats are written in shortest round-trip form, so re-reading an export
//! yields the exact coordinates it was written from.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{parse_obj, triangle_area, Normalization, ObjData, SurfaceMesh, MIN_FACE_AREA};
use crate::losses::{evaluate, evaluate_points, DistortionReport, UvLayout};
use crate::multichart::ChartPlacement;

/// Per-vertex and per-face chart ids written next to an atlas OBJ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSidecar {
    pub charts: usize,
    pub vertex_chart: Vec<usize>,
    pub face_chart: Vec<usize>,
    pub placements: Vec<ChartPlacement>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// OBJ text with `v` rows in the original coordinate frame, one `vt` per
/// layout UV row, and `f v/vt` triangles.
pub fn uv_obj_text(vertices: ArrayView2<f64>, norm: &Normalization, faces: &[[usize; 3]], layout: &UvLayout) -> String {
    let mut s = String::new();
    for row in vertices.rows() {
        let p = norm.restore([row[0], row[1], row[2]]);
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for row in layout.uv.rows() {
        let _ = writeln!(s, "vt {} {}", row[0], row[1]);
    }
    for (f, c) in faces.iter().zip(&layout.corners) {
        let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, c[0] + 1, f[1] + 1, c[1] + 1, f[2] + 1, c[2] + 1);
    }
    s
}

pub fn write_uv_obj(path: &Path, vertices: ArrayView2<f64>, norm: &Normalization, faces: &[[usize; 3]], layout: &UvLayout) -> Result<()> {
    std::fs::write(path, uv_obj_text(vertices, norm, faces, layout)).map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

/// SVG 1.1 drawing of a UV layout: triangles filled by chart, seam
/// vertices as red dots. Points-only layouts are drawn as dots.
pub fn layout_svg(layout: &UvLayout, seam_uv: &[[f64; 2]]) -> String {
    const SIZE: f64 = 1024.0;
    const MARGIN: f64 = 16.0;
    let uv = &layout.uv;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in uv.rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(r[d]);
            hi[d] = hi[d].max(r[d]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if extent > 0.0 && extent.is_finite() { (SIZE - 2.0 * MARGIN) / extent } else { 1.0 };
    // v grows upward in texture space
    let map = |p: [f64; 2]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<g stroke="#333" stroke-width="0.3" fill-opacity="0.6">"##);
    for (c, &k) in layout.corners.iter().zip(&layout.face_chart) {
        let pts: Vec<String> = c
            .iter()
            .map(|&i| {
                let (x, y) = map([uv[[i, 0]], uv[[i, 1]]]);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{}"/>"#, pts.join(" "), PALETTE[k % PALETTE.len()]);
    }
    let _ = writeln!(s, "</g>");
    if layout.corners.is_empty() {
        let _ = writeln!(s, r##"<g fill="#4e79a7">"##);
        for r in uv.rows() {
            let (x, y) = map([r[0], r[1]]);
            let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="1.5"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, r##"<g fill="#d62728">"##);
    for &p in seam_uv {
        let (x, y) = map(p);
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="2.5"/>"#);
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

/// Mesh and layout read back from a UV OBJ. Faces dropped by mesh
/// construction (degenerate after normalization) are dropped from the
/// layout too, so the two stay aligned.
pub fn layout_from_obj(data: &ObjData, path: &Path) -> Result<(SurfaceMesh, UvLayout)> {
    if data.positions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = data.positions.len();
    let vertices = Array2::from_shape_fn((v, 3), |(i, d)| data.positions[i][d]);
    let mut faces = Vec::with_capacity(data.triangles.len());
    let mut corners = Vec::with_capacity(data.triangles.len());
    for t in &data.triangles {
        let vt = [t[0].vt, t[1].vt, t[2].vt];
        let [Some(a), Some(b), Some(c)] = vt else {
            return Err(Error::Argument(format!("{}: faces without texture coordinates", path.display())));
        };
        faces.push([t[0].v, t[1].v, t[2].v]);
        corners.push([a, b, c]);
    }
    let mesh = SurfaceMesh::new(vertices, faces.clone(), None)?;
    let keep: Vec<bool> = faces
        .iter()
        .map(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2] && triangle_area(mesh.vertices.view(), *f) >= MIN_FACE_AREA)
        .collect();
    let corners: Vec<[usize; 3]> = corners.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c).collect();
    let uv = Array2::from_shape_fn((data.texcoords.len(), 2), |(i, d)| data.texcoords[i][d]);
    let n = corners.len();
    Ok((
        mesh,
        UvLayout {
            uv,
            corners,
            face_chart: vec![0; n],
            vertex_chart: None,
            seam_vertices: Vec::new(),
        },
    ))
}

/// Distortion report of an exported OBJ. Without faces, `v` and `vt` rows
/// are paired by order and the point-cloud metrics are used.
pub fn evaluate_obj(path: &Path, charts: Option<&ChartSidecar>, seams: Option<&[usize]>) -> Result<DistortionReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_obj(&text, path)?;
    let seams = seams.unwrap_or(&[]).to_vec();
    if data.triangles.is_empty() {
        if data.texcoords.len() != data.positions.len() {
            return Err(Error::Argument(format!(
                "{}: a face-less OBJ needs one vt per v ({} vs {})",
                path.display(),
                data.texcoords.len(),
                data.positions.len()
            )));
        }
        let ps = crate::geometry::PointSet::new(Array2::from_shape_fn((data.positions.len(), 3), |(i, d)| data.positions[i][d]), None)?;
        let uv = Array2::from_shape_fn((data.texcoords.len(), 2), |(i, d)| data.texcoords[i][d]);
        return evaluate_points(ps.points.view(), uv.view(), &seams);
    }
    let (mesh, mut layout) = layout_from_obj(&data, path)?;
    layout.seam_vertices = seams;
    if let Some(c) = charts {
        if c.face_chart.len() != layout.corners.len() || c.vertex_chart.len() != mesh.num_vertices() {
            return Err(Error::Argument("chart sidecar does not match the OBJ".into()));
        }
        layout.face_chart = c.face_chart.clone();
        layout.vertex_chart = Some(c.vertex_chart.clone());
    }
    evaluate(mesh.vertices.view(), &mesh.faces, &layout)
}

/// OBJ with one `v` and one `vt` per point and no faces.
pub fn points_obj_text(points: ArrayView2<f64>, norm: &Normalization, uv: ArrayView2<f64>) -> String {
    let mut s = String::new();
    for row in points.rows() {
        let p = norm.restore([row[0], row[1], row[2]]);
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for row in uv.rows() {
        let _ = writeln!(s, "vt {} {}", row[0], row[1]);
    }
    s
}
