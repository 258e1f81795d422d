//! Analytic test surfaces.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{PointSet, SurfaceMesh};

/// `n x n` vertex grid in the z = 0 plane.
pub fn flat_grid(n: usize) -> Result<SurfaceMesh> {
    let v = Array2::from_shape_fn((n * n, 3), |(i, d)| match d {
        0 => (i % n) as f64 / (n - 1) as f64,
        1 => (i / n) as f64 / (n - 1) as f64,
        _ => 0.0,
    });
    let mut faces = Vec::new();
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            let a = r * n + c;
            faces.push([a, a + 1, a + n + 1]);
            faces.push([a, a + n + 1, a + n]);
        }
    }
    SurfaceMesh::new(v, faces, None)
}

/// Open cylinder (no caps) around the z axis: `around` vertices per ring,
/// `rings` rings spread over `height`.
pub fn open_cylinder(radius: f64, height: f64, around: usize, rings: usize) -> Result<SurfaceMesh> {
    let v = Array2::from_shape_fn((around * rings, 3), |(i, d)| {
        let (r, a) = (i / around, i % around);
        let phi = 2.0 * PI * a as f64 / around as f64;
        match d {
            0 => radius * phi.cos(),
            1 => radius * phi.sin(),
            _ => height * r as f64 / (rings - 1) as f64,
        }
    });
    let mut faces = Vec::new();
    for r in 0..rings - 1 {
        for a in 0..around {
            let b = (a + 1) % around;
            let (p0, p1, p2, p3) = (r * around + a, r * around + b, (r + 1) * around + b, (r + 1) * around + a);
            faces.push([p0, p1, p2]);
            faces.push([p0, p2, p3]);
        }
    }
    SurfaceMesh::new(v, faces, None)
}

/// Rows `0..around` and the last `around` rows of an [`open_cylinder`].
pub fn cylinder_boundaries(around: usize, rings: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..around).collect(), ((rings - 1) * around..rings * around).collect())
}

/// Unit cube with every face split into an `n x n` quad grid, shared
/// edge and corner vertices welded.
pub fn subdivided_cube(n: usize) -> Result<SurfaceMesh> {
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, side, in-plane axes ordered so the face points outward)
    let sides = [(0, 1, 1, 2), (0, 0, 2, 1), (1, 1, 2, 0), (1, 0, 0, 2), (2, 1, 0, 1), (2, 0, 1, 0)];
    for &(axis, side, ua, va) in &sides {
        let mut id = |i: usize, j: usize| {
            let mut key = [0i64; 3];
            key[axis] = (side * n) as i64;
            key[ua] = i as i64;
            key[va] = j as i64;
            *index.entry(key).or_insert_with(|| {
                verts.push(key.map(|k| k as f64 / n as f64));
                verts.len() - 1
            })
        };
        for i in 0..n {
            for j in 0..n {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    let v = Array2::from_shape_fn((verts.len(), 3), |(i, d)| verts[i][d]);
    SurfaceMesh::new(v, faces, None)
}

/// `count` uniform random points on the unit square in z = 0, without normals.
pub fn sampled_plane(count: usize, seed: u64) -> Result<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Array2::from_shape_fn((count, 3), |(_, d)| if d == 2 { 0.0 } else { rng.random_range(0.0..1.0) });
    PointSet::new(p, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let g = flat_grid(16).unwrap();
        assert_eq!((g.num_vertices(), g.num_faces()), (256, 450));
        let c = open_cylinder(0.25, 1.0, 24, 12).unwrap();
        assert_eq!((c.num_vertices(), c.num_faces()), (288, 24 * 11 * 2));
        let cube = subdivided_cube(16).unwrap();
        assert_eq!((cube.num_vertices(), cube.num_faces()), (1538, 6 * 16 * 16 * 2));
        assert_eq!(sampled_plane(2000, 1).unwrap().len(), 2000);
    }

    #[test]
    fn cube_normals_point_outward() {
        let cube = subdivided_cube(4).unwrap();
        for i in 0..cube.num_vertices() {
            let p = cube.vertices.row(i);
            let n = cube.normals.row(i);
            assert!(p.dot(&n) > 0.0);
        }
    }

    #[test]
    fn grid_normals_are_consistent() {
        let g = flat_grid(5).unwrap();
        let z = g.normals.column(2);
        assert!(z.iter().all(|&x| (x.abs() - 1.0).abs() < 1e-12 && x.signum() == z[0].signum()));
    }
}
