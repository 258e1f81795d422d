//! Surface and point-cloud containers plus the small amount of geometry the
//! optimizer needs: normals, bounding-box normalization, edge lists and exact
//! nearest-neighbor queries.

mod knn;
mod obj;
mod pointcloud;

pub use knn::{knn, knn_self, KdTree, NeighborTable};
pub use obj::{load_mesh, load_uv_mesh, parse_obj, ObjData};
pub use pointcloud::{load_points, parse_ply, parse_xyz};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Faces whose area after normalization falls below this are dropped at load.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Affine map applied by [`normalize`]: `normalized = (original - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn compose(&self, then: &Normalization) -> Normalization {
        // then((x - c1) s1) = ((x - c1) s1 - c2) s2 = (x - (c1 + c2 / s1)) s1 s2
        let mut center = self.center;
        for (c, c2) in center.iter_mut().zip(then.center) {
            *c += c2 / self.scale;
        }
        Normalization {
            center,
            scale: self.scale * then.scale,
        }
    }

    pub fn restore(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] / self.scale + self.center[0],
            p[1] / self.scale + self.center[1],
            p[2] / self.scale + self.center[2],
        ]
    }
}

/// Triangle mesh with per-vertex unit normals, normalized into the unit box.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Array2<f64>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Array2<f64>,
    /// Map from the file's coordinates to `vertices`.
    pub normalization: Normalization,
}

/// Unstructured points, optionally with unit normals.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Array2<f64>,
    pub normals: Option<Array2<f64>>,
    pub normalization: Normalization,
}

impl SurfaceMesh {
    /// Builds a mesh from raw positions and faces: validates indices, normalizes,
    /// drops degenerate faces and computes normals when none are given.
    pub fn new(vertices: Array2<f64>, faces: Vec<[usize; 3]>, normals: Option<Array2<f64>>) -> Result<Self> {
        let v = vertices.nrows();
        if v == 0 {
            return Err(Error::EmptyInput);
        }
        if vertices.ncols() != 3 {
            return Err(Error::Shape(format!("vertices must be V x 3, got {:?}", vertices.dim())));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("vertex coordinates must be finite".into()));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= v) {
                return Err(Error::Argument(format!("face {f:?} references a vertex outside [0, {v})")));
            }
        }
        let (vertices, normalization) = normalize_points(vertices.view())?;
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .filter(|f| triangle_area(vertices.view(), *f) >= MIN_FACE_AREA)
            .collect();

        let normals = match normals {
            Some(n) if n.dim() == (v, 3) => {
                let mut n = n;
                let computed = compute_vertex_normals(vertices.view(), &faces);
                for (i, mut row) in n.rows_mut().into_iter().enumerate() {
                    let len = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
                    if len > 1e-12 && len.is_finite() {
                        row.mapv_inplace(|x| x / len);
                    } else {
                        row.assign(&computed.row(i));
                    }
                }
                n
            }
            _ => compute_vertex_normals(vertices.view(), &faces),
        };

        Ok(SurfaceMesh {
            vertices,
            faces,
            normals,
            normalization,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        unique_edges(&self.faces)
    }

    pub fn to_point_set(&self, keep_normals: bool) -> PointSet {
        PointSet {
            points: self.vertices.clone(),
            normals: keep_normals.then(|| self.normals.clone()),
            normalization: self.normalization,
        }
    }
}

impl PointSet {
    pub fn new(points: Array2<f64>, normals: Option<Array2<f64>>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if points.ncols() != 3 {
            return Err(Error::Shape(format!("points must be V x 3, got {:?}", points.dim())));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("point coordinates must be finite".into()));
        }
        let normals = match normals {
            Some(mut n) => {
                if n.dim() != points.dim() {
                    return Err(Error::Shape("normals must match points".into()));
                }
                for mut row in n.rows_mut() {
                    let len = row.dot(&row).sqrt();
                    if !(len > 1e-12) || !len.is_finite() {
                        return Err(Error::Argument("point normals must be non-zero and finite".into()));
                    }
                    row.mapv_inplace(|x| x / len);
                }
                Some(n)
            }
            None => None,
        };
        let (points, normalization) = normalize_points(points.view())?;
        Ok(PointSet {
            points,
            normals,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// Recenters the mesh on its bounding-box center and scales the longest box side to 1.
pub fn normalize(mesh: &SurfaceMesh) -> Result<SurfaceMesh> {
    let (vertices, t) = normalize_points(mesh.vertices.view())?;
    Ok(SurfaceMesh {
        vertices,
        faces: mesh.faces.clone(),
        normals: mesh.normals.clone(),
        normalization: mesh.normalization.compose(&t),
    })
}

pub fn normalize_points(points: ArrayView2<f64>) -> Result<(Array2<f64>, Normalization)> {
    if points.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = bounding_box3(points);
    let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let scale = 1.0 / extent;
    let mut out = points.to_owned();
    for mut row in out.rows_mut() {
        for d in 0..3 {
            row[d] = (row[d] - center[d]) * scale;
        }
    }
    Ok((out, Normalization { center, scale }))
}

pub fn bounding_box3(points: ArrayView2<f64>) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for row in points.rows() {
        for d in 0..3 {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    (lo, hi)
}

/// Side of the square that bounds a set of 2D points (the larger of the two extents).
pub fn square_side(uv: ArrayView2<f64>) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in uv.rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    (hi[0] - lo[0]).max(hi[1] - lo[1]).max(0.0)
}

pub fn triangle_area(vertices: ArrayView2<f64>, f: [usize; 3]) -> f64 {
    let n = face_cross(vertices, f);
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

fn face_cross(vertices: ArrayView2<f64>, f: [usize; 3]) -> [f64; 3] {
    let p = |i: usize| [vertices[[i, 0]], vertices[[i, 1]], vertices[[i, 2]]];
    let (a, b, c) = (p(f[0]), p(f[1]), p(f[2]));
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Area-weighted average of incident face normals. Vertices with no incident
/// face (or whose face normals cancel) get +Z.
pub fn compute_vertex_normals(vertices: ArrayView2<f64>, faces: &[[usize; 3]]) -> Array2<f64> {
    let mut acc = Array2::<f64>::zeros((vertices.nrows(), 3));
    for &f in faces {
        // the cross product already carries twice the face area
        let n = face_cross(vertices, f);
        for &i in &f {
            for d in 0..3 {
                acc[[i, d]] += n[d];
            }
        }
    }
    for mut row in acc.rows_mut() {
        let len = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
        if len > 1e-300 {
            row.mapv_inplace(|x| x / len);
        } else {
            row.assign(&ndarray::arr1(&[0.0, 0.0, 1.0]));
        }
    }
    acc
}

/// Undirected edges of a triangle list, each once, as `[lo, hi]` in sorted order.
pub fn unique_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = faces
        .iter()
        .flat_map(|f| [[f[0], f[1]], [f[1], f[2]], [f[2], f[0]]])
        .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// One-ring vertex adjacency from the face list, each list sorted ascending.
pub fn one_ring(num_vertices: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut ring = vec![Vec::new(); num_vertices];
    for [a, b] in unique_edges(faces) {
        ring[a].push(b);
        ring[b].push(a);
    }
    for r in &mut ring {
        r.sort_unstable();
    }
    ring
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn icosahedron() -> (Array2<f64>, Vec<[usize; 3]>) {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let v = array![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0]
        ];
        let f = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        (v, f)
    }

    #[test]
    fn flat_grid_normals_point_up() {
        let mut v = Array2::zeros((9, 3));
        let mut faces = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                v[[i * 3 + j, 0]] = j as f64;
                v[[i * 3 + j, 1]] = i as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let a = i * 3 + j;
                faces.push([a, a + 1, a + 4]);
                faces.push([a, a + 4, a + 3]);
            }
        }
        let n = compute_vertex_normals(v.view(), &faces);
        for row in n.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn icosahedron_normals_are_radial() {
        let (v, f) = icosahedron();
        let n = compute_vertex_normals(v.view(), &f);
        for (p, n) in v.rows().into_iter().zip(n.rows()) {
            let len = p.dot(&p).sqrt();
            for d in 0..3 {
                assert!((p[d] / len - n[d]).abs() < 1e-6);
            }
            assert!((n.dot(&n).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_triangle_normals_match_face() {
        let v = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let n = compute_vertex_normals(v.view(), &[[0, 1, 2]]);
        for row in n.rows() {
            assert_eq!(row.to_vec(), vec![0.0, -1.0, 0.0]);
        }
    }

    #[test]
    fn isolated_vertex_gets_plus_z() {
        let v = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        let n = compute_vertex_normals(v.view(), &[[0, 1, 2]]);
        assert_eq!(n.row(3).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_cube_corners() {
        let mut v = Array2::zeros((8, 3));
        for i in 0..8 {
            for d in 0..3 {
                v[[i, d]] = if i >> d & 1 == 1 { 2.0 } else { 0.0 };
            }
        }
        let (out, t) = normalize_points(v.view()).unwrap();
        assert_eq!(t.scale, 0.5);
        for i in 0..8 {
            for d in 0..3 {
                let expect = if i >> d & 1 == 1 { 0.5 } else { -0.5 };
                assert_eq!(out[[i, d]], expect);
            }
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let (v, f) = icosahedron();
        let mesh = SurfaceMesh::new(v, f, None).unwrap();
        let again = normalize(&mesh).unwrap();
        for (a, b) in mesh.vertices.iter().zip(again.vertices.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_flat_mesh_keeps_zero_side() {
        let v = array![[0.0, 0.0, 3.0], [4.0, 0.0, 3.0], [4.0, 2.0, 3.0]];
        let (out, t) = normalize_points(v.view()).unwrap();
        assert_eq!(t.scale, 0.25);
        assert!(out.column(2).iter().all(|&z| z == 0.0));
        assert_eq!(out[[1, 0]], 0.5);
        assert_eq!(out[[2, 1]], 0.25);
    }

    #[test]
    fn normalize_rejects_identical_points() {
        let v = array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        assert!(matches!(normalize_points(v.view()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let v = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]];
        let mesh = SurfaceMesh::new(v, vec![[0, 1, 2], [0, 1, 3], [0, 0, 2]], None).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn composed_normalization_matches_sequential_application() {
        let a = Normalization { center: [1.0, -2.0, 0.5], scale: 0.25 };
        let b = Normalization { center: [0.1, 0.2, -0.3], scale: 3.0 };
        let ab = a.compose(&b);
        let x = [0.7, 1.3, -4.0];
        for d in 0..3 {
            let seq = ((x[d] - a.center[d]) * a.scale - b.center[d]) * b.scale;
            let one = (x[d] - ab.center[d]) * ab.scale;
            assert!((seq - one).abs() < 1e-12);
        }
        let r = ab.restore([(x[0] - ab.center[0]) * ab.scale, (x[1] - ab.center[1]) * ab.scale, (x[2] - ab.center[2]) * ab.scale]);
        for d in 0..3 {
            assert!((r[d] - x[d]).abs() < 1e-12);
        }
    }
}
