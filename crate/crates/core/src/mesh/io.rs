//! ASCII OFF and OBJ mesh files.
//!
//! Coordinates are written in scientific notation with 17 significant digits,
//! which round-trips every f64 exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MeshError, Point, TriMesh};

pub type RawMesh = (Vec<Point>, Vec<[usize; 3]>);

fn coord(out: &mut String, p: &Point) {
    let _ = write!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
}

pub fn to_off_string(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.n_vertices() * 72 + mesh.n_faces() * 24);
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.n_vertices(), mesh.n_faces());
    for p in mesh.positions() {
        coord(&mut out, p);
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for p in mesh.positions() {
        out.push_str("v ");
        coord(&mut out, p);
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse { line, msg: msg.into() }
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64, MeshError> {
    tok.ok_or_else(|| parse_err(line, "missing coordinate"))?
        .parse()
        .map_err(|e| parse_err(line, format!("{e}")))
}

/// Parses OFF text. Polygons with more than three corners are fanned.
pub fn parse_off(text: &str) -> Result<RawMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n0, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let counts_line = if header == "OFF" {
        lines.next().ok_or_else(|| parse_err(n0, "missing counts"))?
    } else if let Some(rest) = header.strip_prefix("OFF") {
        (n0, rest.trim())
    } else {
        return Err(parse_err(n0, "expected OFF header"));
    };
    let mut counts = counts_line.1.split_whitespace().map(|t| t.parse::<usize>());
    let nv = counts.next().and_then(|c| c.ok()).ok_or_else(|| parse_err(counts_line.0, "bad vertex count"))?;
    let nf = counts.next().and_then(|c| c.ok()).ok_or_else(|| parse_err(counts_line.0, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "truncated vertex list"))?;
        let mut t = l.split_whitespace();
        vertices.push(Point::new(parse_f64(t.next(), ln)?, parse_f64(t.next(), ln)?, parse_f64(t.next(), ln)?));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "truncated face list"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| parse_err(ln, format!("{e}"))))
            .collect::<Result<_, _>>()?;
        let k = *idx.first().ok_or_else(|| parse_err(ln, "empty face"))?;
        if k < 3 || idx.len() < k + 1 {
            return Err(parse_err(ln, "face needs at least three indices"));
        }
        for j in 1..k - 1 {
            faces.push([idx[1], idx[j + 1], idx[j + 2]]);
        }
    }
    Ok((vertices, faces))
}

/// Parses OBJ text (`v` and `f` records only; `f` entries may carry `/vt/vn`).
pub fn parse_obj(text: &str) -> Result<RawMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let ln = i + 1;
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => vertices.push(Point::new(parse_f64(t.next(), ln)?, parse_f64(t.next(), ln)?, parse_f64(t.next(), ln)?)),
            Some("f") => {
                let idx: Vec<usize> = t
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        match head.parse::<usize>() {
                            Ok(v) if v >= 1 => Ok(v - 1),
                            _ => Err(parse_err(ln, format!("bad face index {tok:?}"))),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(ln, "face needs at least three indices"));
                }
                for j in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[j], idx[j + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => to_obj_string(mesh),
        _ => to_off_string(mesh),
    };
    fs::write(path, text).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))
}

pub fn read_raw(path: &Path) -> Result<RawMesh, MeshError> {
    let text = fs::read_to_string(path).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => parse_obj(&text),
        _ => parse_off(&text),
    }
}

/// Reads a closed mesh from an `.off` or `.obj` file.
pub fn read_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let (v, f) = read_raw(path)?;
    TriMesh::new(v, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::{icosphere, torus};

    #[test]
    fn off_round_trip_is_bit_exact() {
        let m = torus(2.0, 0.6, 12, 8).mapped(|p| p * std::f64::consts::PI).unwrap();
        let (v, f) = parse_off(&to_off_string(&m)).unwrap();
        assert_eq!(f, m.faces());
        for (a, b) in v.iter().zip(m.positions()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn obj_round_trip_through_file() {
        let m = icosphere(1.3, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.obj");
        write_mesh(&m, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.positions(), m.positions());
        assert_eq!(back.faces(), m.faces());
    }

    #[test]
    fn quads_are_fanned_and_errors_located() {
        let (_, f) = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
        let err = parse_off("OFF\n1 0 0\n0 zero 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 3, .. }), "{err}");
    }
}
