use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use super::SurfaceMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub v: usize,
    pub vt: Option<usize>,
    pub vn: Option<usize>,
}

/// Raw contents of a Wavefront OBJ file after fan triangulation.
#[derive(Debug, Clone, Default)]
pub struct ObjData {
    pub positions: Vec<[f64; 3]>,
    pub texcoords: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 3]>,
    pub triangles: Vec<[Corner; 3]>,
}

pub fn parse_obj(text: &str, path: &Path) -> Result<ObjData> {
    let mut data = ObjData::default();
    let err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" | "vn" | "vt" => {
                let want = if tag == "vt" { 2 } else { 3 };
                let vals: Vec<f64> = tokens
                    .take(want)
                    .map(|t| t.parse::<f64>().map_err(|_| err(lineno, format!("bad number '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() < want {
                    return Err(err(lineno, format!("'{tag}' needs {want} coordinates")));
                }
                if vals.iter().any(|x| !x.is_finite()) {
                    return Err(err(lineno, "non-finite coordinate".into()));
                }
                match tag {
                    "v" => data.positions.push([vals[0], vals[1], vals[2]]),
                    "vn" => data.normals.push([vals[0], vals[1], vals[2]]),
                    _ => data.texcoords.push([vals[0], vals[1]]),
                }
            }
            "f" => {
                let corners: Vec<Corner> = tokens
                    .map(|t| parse_corner(t, &data).map_err(|m| err(lineno, m)))
                    .collect::<Result<_>>()?;
                if corners.len() < 3 {
                    return Err(err(lineno, "face needs at least 3 vertices".into()));
                }
                for i in 1..corners.len() - 1 {
                    data.triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(data)
}

fn resolve(token: &str, count: usize, what: &str) -> std::result::Result<usize, String> {
    let idx: i64 = token
        .parse()
        .map_err(|_| format!("bad {what} index '{token}'"))?;
    let resolved = match idx {
        0 => return Err(format!("{what} index 0 is invalid (OBJ indices start at 1)")),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(format!("{what} index {idx} out of range (have {count})"));
    }
    Ok(resolved as usize)
}

fn parse_corner(token: &str, data: &ObjData) -> std::result::Result<Corner, String> {
    let mut parts = token.split('/');
    let v = resolve(parts.next().unwrap_or(""), data.positions.len(), "vertex")?;
    let vt = match parts.next() {
        Some("") | None => None,
        Some(t) => Some(resolve(t, data.texcoords.len(), "texture")?),
    };
    let vn = match parts.next() {
        Some("") | None => None,
        Some(t) => Some(resolve(t, data.normals.len(), "normal")?),
    };
    Ok(Corner { v, vt, vn })
}

fn read(path: &Path) -> Result<ObjData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Loads a triangle mesh; quads and polygons are fan-triangulated and
/// texture coordinates are ignored.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let data = read(path.as_ref())?;
    mesh_from_obj(&data)
}

pub fn mesh_from_obj(data: &ObjData) -> Result<SurfaceMesh> {
    if data.positions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = data.positions.len();
    let vertices = Array2::from_shape_fn((v, 3), |(i, d)| data.positions[i][d]);
    let faces: Vec<[usize; 3]> = data
        .triangles
        .iter()
        .map(|t| [t[0].v, t[1].v, t[2].v])
        .collect();

    // first referenced vn per vertex; only used when every vertex has one
    let mut normal_of: Vec<Option<usize>> = vec![None; v];
    for t in &data.triangles {
        for c in t {
            if let (None, Some(n)) = (normal_of[c.v], c.vn) {
                normal_of[c.v] = Some(n);
            }
        }
    }
    let normals = if normal_of.iter().all(Option::is_some) && !data.normals.is_empty() {
        Some(Array2::from_shape_fn((v, 3), |(i, d)| data.normals[normal_of[i].unwrap()][d]))
    } else {
        None
    };
    SurfaceMesh::new(vertices, faces, normals)
}

/// Loads a mesh with per-corner texture coordinates and returns one UV per
/// vertex. Positions referenced with several distinct `vt` indices are split
/// so that each (position, texcoord) pair becomes its own vertex; files where
/// every position has a single `vt` keep their vertex order.
pub fn load_uv_mesh(path: impl AsRef<Path>) -> Result<(SurfaceMesh, Array2<f64>)> {
    let path = path.as_ref();
    let data = read(path)?;
    uv_mesh_from_obj(&data, path)
}

fn uv_mesh_from_obj(data: &ObjData, path: &Path) -> Result<(SurfaceMesh, Array2<f64>)> {
    if data.positions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let missing = || Error::Argument(format!("{}: faces without texture coordinates", path.display()));
    let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut faces = Vec::with_capacity(data.triangles.len());
    for t in &data.triangles {
        let mut f = [0; 3];
        for (slot, c) in f.iter_mut().zip(t) {
            let vt = c.vt.ok_or_else(missing)?;
            *slot = *pairs.entry((c.v, vt)).or_insert_with(|| {
                order.push((c.v, vt));
                order.len() - 1
            });
        }
        faces.push(f);
    }

    let mut vt_of: Vec<Option<usize>> = vec![None; data.positions.len()];
    let mut one_to_one = true;
    for &(v, vt) in &order {
        match vt_of[v] {
            None => vt_of[v] = Some(vt),
            Some(_) => one_to_one = false,
        }
    }
    let referenced_all = vt_of.iter().all(Option::is_some);

    if one_to_one && referenced_all {
        let v = data.positions.len();
        let vertices = Array2::from_shape_fn((v, 3), |(i, d)| data.positions[i][d]);
        let uv = Array2::from_shape_fn((v, 2), |(i, d)| data.texcoords[vt_of[i].unwrap()][d]);
        let faces = data.triangles.iter().map(|t| [t[0].v, t[1].v, t[2].v]).collect();
        let mesh = SurfaceMesh::new(vertices, faces, None)?;
        return Ok((mesh, uv));
    }

    let vertices = Array2::from_shape_fn((order.len(), 3), |(i, d)| data.positions[order[i].0][d]);
    let uv = Array2::from_shape_fn((order.len(), 2), |(i, d)| data.texcoords[order[i].1][d]);
    let mesh = SurfaceMesh::new(vertices, faces, None)?;
    Ok((mesh, uv))
}
