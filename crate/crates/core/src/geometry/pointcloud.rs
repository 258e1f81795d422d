use std::path::Path;

use ndarray::Array2;

use super::PointSet;
use crate::error::{Error, Result};

/// Reads an `.xyz` text file or a `.ply` file (binary little-endian or ascii).
pub fn load_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_ply = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        || bytes.starts_with(b"ply");
    let (points, normals) = if is_ply {
        parse_ply(&bytes, path)?
    } else {
        let text = String::from_utf8_lossy(&bytes);
        parse_xyz(&text, path)?
    };
    PointSet::new(points, normals)
}

type Parsed = (Array2<f64>, Option<Array2<f64>>);

/// One point per line: `x y z` or `x y z nx ny nz`.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Parsed> {
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    let mut with_normals = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected numeric columns".into(),
            })?;
        let has_n = vals.len() >= 6;
        if vals.len() < 3 || *with_normals.get_or_insert(has_n) != has_n {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 3 or 6 columns consistently, got {}", vals.len()),
            });
        }
        pts.extend_from_slice(&vals[..3]);
        if has_n {
            nrm.extend_from_slice(&vals[3..6]);
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = pts.len() / 3;
    let points = Array2::from_shape_vec((n, 3), pts).expect("row-major triples");
    let normals = (!nrm.is_empty()).then(|| Array2::from_shape_vec((n, 3), nrm).expect("row-major triples"));
    Ok((points, normals))
}

#[derive(Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// PLY reader for the vertex element only (x, y, z and optional nx, ny, nz).
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<Parsed> {
    let fmt_err = |line: usize, message: &str| Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };

    let mut offset = 0;
    let mut header = Vec::new();
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt_err(header.len() + 1, "unterminated PLY header"))?;
        let line = String::from_utf8_lossy(&bytes[offset..offset + end]).trim().to_string();
        offset += end + 1;
        let done = line == "end_header";
        header.push(line);
        if done {
            break;
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(fmt_err(1, "missing 'ply' magic"));
    }

    let mut binary = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut vertex_first = true;
    for (i, line) in header.iter().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", ..] => binary = Some(true),
            ["format", "ascii", ..] => binary = Some(false),
            ["format", other, ..] => return Err(fmt_err(i + 1, &format!("unsupported PLY format {other}"))),
            ["element", "vertex", n] => {
                in_vertex = true;
                count = Some(n.parse::<usize>().map_err(|_| fmt_err(i + 1, "bad vertex count"))?);
            }
            ["element", ..] => {
                if count.is_none() {
                    vertex_first = false;
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(fmt_err(i + 1, "list properties on vertices are not supported"))
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| fmt_err(i + 1, "unknown property type"))?;
                props.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| fmt_err(2, "missing format line"))?;
    let count = count.ok_or_else(|| fmt_err(2, "missing vertex element"))?;
    if !vertex_first {
        return Err(fmt_err(2, "vertex element must come first"));
    }
    let find = |n: &str| props.iter().position(|(p, _)| p == n);
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(fmt_err(2, "vertex element lacks x/y/z"));
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    if binary {
        let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
        if bytes.len() < offset + stride * count {
            return Err(fmt_err(header.len(), "truncated binary vertex data"));
        }
        for r in 0..count {
            let mut at = offset + r * stride;
            let mut row = Vec::with_capacity(props.len());
            for (_, s) in &props {
                row.push(s.read_le(&bytes[at..]));
                at += s.size();
            }
            rows.push(row);
        }
    } else {
        let body = String::from_utf8_lossy(&bytes[offset..]);
        for (i, line) in body.lines().filter(|l| !l.trim().is_empty()).take(count).enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .take(props.len())
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| fmt_err(header.len() + i + 1, "bad vertex value"))?;
            if row.len() != props.len() {
                return Err(fmt_err(header.len() + i + 1, "short vertex row"));
            }
            rows.push(row);
        }
        if rows.len() != count {
            return Err(fmt_err(header.len(), "fewer vertex rows than declared"));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let points = Array2::from_shape_fn((count, 3), |(i, d)| rows[i][[x, y, z][d]]);
    let normals = normal_idx.map(|ni| Array2::from_shape_fn((count, 3), |(i, d)| rows[i][ni[d]]));
    Ok((points, normals))
}
