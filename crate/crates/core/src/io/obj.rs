use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{io_err, IoError};
use crate::geometry::{Face, TriMesh};

/// Non-fatal findings while reading an OBJ.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjWarnings {
    /// Faces with more than three corners, fan-triangulated from their first corner.
    pub polygons_triangulated: usize,
}

impl ObjWarnings {
    pub fn is_empty(&self) -> bool {
        self.polygons_triangulated == 0
    }
}

const TEXTURE_TAG: &str = "texture_path";

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

fn floats<const N: usize>(line: usize, fields: &[&str]) -> Result<[f64; N], IoError> {
    if fields.len() < N {
        return Err(parse_err(line, format!("expected {N} coordinates, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| parse_err(line, format!("invalid number {f:?}")))?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count` elements.
fn index(line: usize, field: &str, count: usize) -> Result<usize, IoError> {
    let i: i64 = field.parse().map_err(|_| parse_err(line, format!("invalid index {field:?}")))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(parse_err(line, format!("index {i} out of range for {count} elements")));
    }
    Ok(resolved as usize)
}

/// Parses OBJ text with `v`, `vt` and `f` statements (`v`, `v/vt`, `v/vt/vn`, `v//vn`
/// corners). Normals, groups and materials are ignored.
pub fn parse_obj(text: &str) -> Result<(TriMesh<f64>, ObjWarnings), IoError> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut uv_faces: Vec<Face> = Vec::new();
    let mut faces_with_uv = 0usize;
    let mut texture_path = None;
    let mut warnings = ObjWarnings::default();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some(TEXTURE_TAG) {
                texture_path = comment.trim_start().strip_prefix(TEXTURE_TAG).map(|p| p.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let Some((&head, rest)) = fields.split_first() else { continue };
        match head {
            "v" => vertices.push(Vector3::from(floats::<3>(line, rest)?)),
            "vt" => uvs.push(Vector2::from(floats::<2>(line, rest)?)),
            "f" => {
                if rest.len() < 3 {
                    return Err(parse_err(line, "face needs at least three corners"));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for corner in rest {
                    let mut parts = corner.split('/');
                    let v = index(line, parts.next().unwrap_or(""), vertices.len())?;
                    let t = match parts.next() {
                        Some(t) if !t.is_empty() => Some(index(line, t, uvs.len())?),
                        _ => None,
                    };
                    corners.push((v, t));
                }
                let textured = corners.iter().all(|c| c.1.is_some());
                if !textured && corners.iter().any(|c| c.1.is_some()) {
                    return Err(parse_err(line, "face mixes corners with and without texture indices"));
                }
                if corners.len() > 3 {
                    warnings.polygons_triangulated += 1;
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    faces.push(tri.map(|c| c.0));
                    if textured {
                        uv_faces.push(tri.map(|c| c.1.unwrap()));
                    }
                }
                faces_with_uv += usize::from(textured);
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if faces_with_uv > 0 {
        if uv_faces.len() != mesh.faces.len() {
            return Err(IoError::Invalid("only some faces carry texture indices".into()));
        }
        mesh = mesh.with_uvs(uvs, uv_faces)?;
    }
    mesh.texture_path = texture_path;
    Ok((mesh, warnings))
}

pub fn read_obj(path: &Path) -> Result<(TriMesh<f64>, ObjWarnings), IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_obj(&text)
}

/// Formats a mesh as OBJ. Coordinates use the shortest representation that parses back to
/// the same `f64`, so a write/read round trip is exact.
pub fn format_obj(mesh: &TriMesh<f64>) -> String {
    let mut s = String::new();
    if let Some(p) = &mesh.texture_path {
        let _ = writeln!(s, "# {TEXTURE_TAG} {p}");
    }
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    match (&mesh.uv_coords, &mesh.uv_faces) {
        (Some(uv), Some(uf)) => {
            for t in uv {
                let _ = writeln!(s, "vt {} {}", t.x, t.y);
            }
            for (f, t) in mesh.faces.iter().zip(uf) {
                let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, t[0] + 1, f[1] + 1, t[1] + 1, f[2] + 1, t[2] + 1);
            }
        }
        _ => {
            for f in &mesh.faces {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriMesh<f64>) -> Result<(), IoError> {
    fs::write(path, format_obj(mesh)).map_err(|e| io_err(path, e))
}
