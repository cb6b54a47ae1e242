//! OBJ and STL reading/writing.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    Obj,
    StlBinary,
    StlAscii,
}

impl MeshFormat {
    /// Guesses the format from the extension; `.stl` files are sniffed for
    /// an ASCII `solid` header that is consistent with the file size.
    pub fn detect(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("stl") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Ok(sniff_stl(&bytes))
            }
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer mesh format of {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obj" => Ok(MeshFormat::Obj),
            "stl" | "stl-binary" => Ok(MeshFormat::StlBinary),
            "stl-ascii" => Ok(MeshFormat::StlAscii),
            other => Err(Error::InvalidArgument(format!("unknown mesh format {other:?}"))),
        }
    }
}

fn sniff_stl(bytes: &[u8]) -> MeshFormat {
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        if 84 + n * 50 == bytes.len() {
            return MeshFormat::StlBinary;
        }
    }
    if bytes.trim_ascii_start().starts_with(b"solid") {
        MeshFormat::StlAscii
    } else {
        MeshFormat::StlBinary
    }
}

/// Loads and cleans a mesh (vertex welding, degenerate-triangle removal).
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&bytes, format)
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh> {
    let raw = match format {
        MeshFormat::Obj => parse_obj(bytes)?,
        MeshFormat::StlBinary => parse_stl_binary(bytes)?,
        MeshFormat::StlAscii => parse_stl_ascii(bytes)?,
    };
    let mesh = raw.cleaned();
    if mesh.is_empty() {
        return Err(Error::EmptyInput("mesh has no non-degenerate triangles".into()));
    }
    log::debug!(
        "loaded mesh: {} vertices, {} triangles",
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    Ok(mesh)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| format_err(e.valid_up_to(), "invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = parts
                        .next()
                        .ok_or_else(|| format_err(start, "vertex record needs 3 coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| format_err(start, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in parts {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| format_err(start, format!("bad face index {tok:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(format_err(start, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(format_err(start, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(format_err(start, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptyInput("OBJ contains no faces".into()));
    }
    TriangleMesh::new(vertices, triangles)
}

fn parse_stl_binary(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.len() < 84 {
        return Err(format_err(bytes.len(), "binary STL shorter than its 84-byte header"));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let need = 84 + n * 50;
    if bytes.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("binary STL truncated: {n} facets need {need} bytes"),
        ));
    }
    if n == 0 {
        return Err(Error::EmptyInput("STL contains no facets".into()));
    }
    let mut vertices = Vec::with_capacity(n * 3);
    let mut triangles = Vec::with_capacity(n);
    for f in 0..n {
        let base = 84 + f * 50 + 12;
        for v in 0..3 {
            let o = base + v * 12;
            let c: [f64; 3] = [0, 1, 2].map(|k| {
                f32::from_le_bytes(bytes[o + 4 * k..o + 4 * k + 4].try_into().unwrap()) as f64
            });
            vertices.push(Point3::new(c[0], c[1], c[2]));
        }
        let i = (f * 3) as u32;
        triangles.push([i, i + 1, i + 2]);
    }
    TriangleMesh::new(vertices, triangles)
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| format_err(e.valid_up_to(), "invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut in_facet = 0usize;
    let mut saw_endsolid = false;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("facet") => in_facet = 0,
            Some("vertex") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = parts
                        .next()
                        .ok_or_else(|| format_err(start, "vertex needs 3 coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| format_err(start, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
                in_facet += 1;
            }
            Some("endloop") if in_facet != 3 => {
                return Err(format_err(start, format!("facet has {in_facet} vertices")));
            }
            Some("endfacet") => {
                if in_facet != 3 {
                    return Err(format_err(start, "facet without 3 vertices"));
                }
                let i = vertices.len() as u32 - 3;
                triangles.push([i, i + 1, i + 2]);
                in_facet = 0;
            }
            Some("endsolid") => saw_endsolid = true,
            _ => {}
        }
    }
    if !saw_endsolid {
        return Err(format_err(bytes.len(), "ASCII STL missing endsolid (truncated?)"));
    }
    if triangles.is_empty() {
        return Err(Error::EmptyInput("STL contains no facets".into()));
    }
    TriangleMesh::new(vertices, triangles)
}

/// Serializes a mesh; fails on empty meshes.
pub fn mesh_bytes(mesh: &TriangleMesh, format: MeshFormat) -> Result<Vec<u8>> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("refusing to save an empty mesh".into()));
    }
    let mut out = Vec::new();
    match format {
        MeshFormat::Obj => {
            for p in mesh.vertices() {
                writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap();
            }
            for t in mesh.triangles() {
                writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
            }
        }
        MeshFormat::StlBinary => {
            let mut header = [0u8; 80];
            header[..10].copy_from_slice(b"matchmaker");
            out.extend_from_slice(&header);
            out.extend_from_slice(&(mesh.triangles().len() as u32).to_le_bytes());
            for t in 0..mesh.triangles().len() {
                let n = mesh.face_normal(t);
                for c in n.iter() {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
                for p in mesh.triangle(t) {
                    for c in p.coords.iter() {
                        out.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
                out.extend_from_slice(&[0, 0]);
            }
        }
        MeshFormat::StlAscii => {
            writeln!(out, "solid matchmaker").unwrap();
            for t in 0..mesh.triangles().len() {
                let n = mesh.face_normal(t);
                writeln!(out, "  facet normal {} {} {}", n.x, n.y, n.z).unwrap();
                writeln!(out, "    outer loop").unwrap();
                for p in mesh.triangle(t) {
                    writeln!(out, "      vertex {} {} {}", p.x, p.y, p.z).unwrap();
                }
                writeln!(out, "    endloop").unwrap();
                writeln!(out, "  endfacet").unwrap();
            }
            writeln!(out, "endsolid matchmaker").unwrap();
        }
    }
    Ok(out)
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = mesh_bytes(mesh, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
