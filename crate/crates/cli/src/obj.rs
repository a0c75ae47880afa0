//! Wavefront OBJ: `v` and `f` records only.

use std::fmt::Write as _;
use std::path::Path;

use bodyshape_core::{TriangleMesh, Vec3};

use crate::error::{CliError, Result};

/// Significant digits written per coordinate.
pub const OBJ_DIGITS: usize = 9;

fn resolve(token: &str, count: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|_| CliError::input(format!("line {line}: bad face index `{token}`")))?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(CliError::input(format!(
            "line {line}: face index {raw} out of range for {count} vertices"
        )));
    }
    Ok(idx as usize)
}

/// Parses OBJ text. Polygons are fan-triangulated; normals, texture
/// coordinates, groups and materials are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let t = tokens
                        .next()
                        .ok_or_else(|| CliError::input(format!("line {line}: vertex needs 3 coordinates")))?;
                    *slot = t
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| CliError::input(format!("line {line}: bad coordinate `{t}`")))?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| resolve(t, vertices.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(CliError::input(format!("line {line}: face needs at least 3 vertices")));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, triangles)?)
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    parse_obj(&text).map_err(|e| e.context(path.display()))
}

/// `x` rounded to [`OBJ_DIGITS`] significant digits, printed in its
/// shortest form.
pub fn format_coordinate(x: f64) -> String {
    let rounded: f64 = format!("{:.*e}", OBJ_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.triangle_count() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(
            out,
            "v {} {} {}",
            format_coordinate(v.x),
            format_coordinate(v.y),
            format_coordinate(v.z)
        );
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    std::fs::write(path, format_obj(mesh)).map_err(|e| CliError::from(e).context(path.display()))
}
