//! Wavefront OBJ subset: `v`, `vn`, `f`, `g`/`o`, and `#` comments.
//!
//! Groups name parts: every face after `g fender` belongs to part
//! `"fender"` until the next group record; a bare `g` returns to the
//! implicit part. Quads and larger polygons are fan-triangulated. Vertex
//! normals are parsed for tolerance but face normals are always
//! recomputed from geometry so they stay consistent with winding.
//! Texture records and material statements (`vt`, `mtllib`, `usemtl`,
//! `s`) are skipped; anything else earns an [`ValidationWarning::UnknownRecord`].
//!
//! The writer emits vertices with shortest round-trip formatting, so
//! saving and reloading reproduces coordinates bit-for-bit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::mesh::{MeshError, TriangleMesh, ValidationWarning};

#[allow(unused_imports)]
use num_traits::Float as _;

fn parse_float(token: &str, line: usize, what: &str) -> Result<f64, MeshError> {
    token.parse::<f64>().map_err(|_| MeshError::Parse {
        line,
        message: format!("invalid {what} component {token:?}"),
    })
}

fn parse_vertex_ref(token: &str, line: usize, count: usize) -> Result<u32, MeshError> {
    let field = token.split('/').next().unwrap_or("");
    let raw: i64 = field.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("invalid face reference {token:?}"),
    })?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(MeshError::Parse {
            line,
            message: String::from("face index 0 is not allowed"),
        });
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(MeshError::FaceIndexOutOfRange {
            line,
            index: raw,
            count,
        });
    }
    Ok(resolved as u32)
}

/// Parses an OBJ document into a mesh plus non-fatal warnings.
///
/// Zero-area faces are dropped (with a warning) rather than kept, so the
/// resulting mesh always has well-defined flat normals.
pub fn parse_obj(text: &str) -> Result<(TriangleMesh, Vec<ValidationWarning>), MeshError> {
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut tri_part: Vec<Option<String>> = Vec::new();
    let mut tri_line: Vec<usize> = Vec::new();
    let mut warnings = Vec::new();
    let mut current_part: Option<String> = None;

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let keyword = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "v" => {
                if rest.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("vertex needs 3 components, got {}", rest.len()),
                    });
                }
                let x = parse_float(rest[0], line, "vertex")?;
                let y = parse_float(rest[1], line, "vertex")?;
                let z = parse_float(rest[2], line, "vertex")?;
                vertices.push(Vector3::new(x, y, z));
            }
            "vn" => {
                // Accepted for compatibility; face normals come from geometry.
                if rest.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("normal needs 3 components, got {}", rest.len()),
                    });
                }
                for t in &rest[..3] {
                    parse_float(t, line, "normal")?;
                }
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("face needs at least 3 vertices, got {}", rest.len()),
                    });
                }
                let refs: Vec<u32> = rest
                    .iter()
                    .map(|t| parse_vertex_ref(t, line, vertices.len()))
                    .collect::<Result<_, _>>()?;
                for k in 1..refs.len() - 1 {
                    triangles.push([refs[0], refs[k], refs[k + 1]]);
                    tri_part.push(current_part.clone());
                    tri_line.push(line);
                }
            }
            "g" | "o" => {
                current_part = rest.first().map(|s| s.to_string());
            }
            "vt" | "s" | "mtllib" | "usemtl" => {}
            other => {
                warnings.push(ValidationWarning::UnknownRecord {
                    line,
                    keyword: other.to_string(),
                });
            }
        }
    }

    // Drop zero-area faces before normal computation.
    let mut kept_triangles = Vec::with_capacity(triangles.len());
    let mut kept_parts = Vec::with_capacity(triangles.len());
    for ((tri, part), line) in triangles.into_iter().zip(tri_part).zip(tri_line) {
        let [a, b, c] = [
            vertices[tri[0] as usize],
            vertices[tri[1] as usize],
            vertices[tri[2] as usize],
        ];
        let cross_norm = (b - a).cross(&(c - a)).norm();
        let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
        if cross_norm == 0.0 || cross_norm <= 1e-12 * longest * longest {
            warnings.push(ValidationWarning::DegenerateTriangleDropped { line });
            continue;
        }
        kept_triangles.push(tri);
        kept_parts.push(part);
    }

    let mut parts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (t, part) in kept_parts.into_iter().enumerate() {
        if let Some(name) = part {
            parts.entry(name).or_default().push(t);
        }
    }

    let mesh = TriangleMesh::new(vertices, kept_triangles, parts)?;
    warnings.extend(mesh.winding_warnings());
    Ok((mesh, warnings))
}

/// Serializes a mesh back to OBJ text.
///
/// Faces keep their stored order; `g` records are emitted whenever the
/// owning part changes, so every triangle reloads into the same part.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let names = mesh.part_names();
    let ids = mesh.triangle_part_ids();
    let mut out = String::new();
    out.push_str(&format!(
        "# {} vertices, {} triangles\n",
        mesh.vertices().len(),
        mesh.triangles().len()
    ));
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    let mut current: Option<u16> = None;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let id = ids[t];
        if current != Some(id) {
            if id == 0 {
                out.push_str("g\n");
            } else {
                out.push_str(&format!("g {}\n", names[(id - 1) as usize]));
            }
            current = Some(id);
        }
        out.push_str(&format!("f {} {} {}\n", tri[0] + 1, tri[1] + 1, tri[2] + 1));
    }
    out
}
