//! Triangle meshes with named parts and wheel-datum metadata.
//!
//! A [`TriangleMesh`] stores vertices, index triples, one flat normal per
//! face, and a map from part name to the triangles it owns. Triangles not
//! claimed by any named part belong to an implicit `"body"` part, so every
//! face always has exactly one part. Part identifiers used by the
//! rasterizer are 1-based positions in the lexicographically sorted
//! [`TriangleMesh::part_names`] list, with `0` reserved for background.
//!
//! [`CarModelDatum`] pins the two wheel centres and the rear-axle
//! direction in model coordinates; pose recovery anchors the camera
//! transform to these three quantities.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;

#[allow(unused_imports)]
use num_traits::Float as _;

/// The implicit part that owns triangles no named group claimed.
pub const IMPLICIT_PART: &str = "body";

/// Errors from mesh construction and OBJ parsing.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face index {index} outside 1..={count}")]
    FaceIndexOutOfRange {
        line: usize,
        index: i64,
        count: usize,
    },
    #[error("triangle {triangle} references vertex {index} but only {count} exist")]
    VertexIndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("part {part:?} references triangle {index} but only {count} exist")]
    PartIndexOutOfRange {
        part: String,
        index: usize,
        count: usize,
    },
    #[error("triangle {triangle} is claimed by more than one part")]
    OverlappingParts { triangle: usize },
    #[error("triangle {index} has (numerically) zero area")]
    DegenerateTriangle { index: usize },
    #[error("datum is degenerate: {0}")]
    DegenerateDatum(String),
}

/// Non-fatal findings reported while loading a mesh. Rendered by the CLI
/// as `WARN <code> <detail>` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationWarning {
    /// A shared edge is traversed in the same direction by two faces.
    InconsistentWinding { edge_count: usize },
    /// A face with zero area was discarded during loading.
    DegenerateTriangleDropped { line: usize },
    /// A record type outside the supported subset was skipped.
    UnknownRecord { line: usize, keyword: String },
}

impl core::fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ValidationWarning::InconsistentWinding { edge_count } => write!(
                f,
                "INCONSISTENT_WINDING {edge_count} shared edge(s) traversed twice in the same direction"
            ),
            ValidationWarning::DegenerateTriangleDropped { line } => {
                write!(f, "DEGENERATE_TRIANGLE dropped zero-area face at line {line}")
            }
            ValidationWarning::UnknownRecord { line, keyword } => {
                write!(f, "UNKNOWN_RECORD skipped '{keyword}' at line {line}")
            }
        }
    }
}

/// A triangulated model with flat per-face normals and named parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vector3<f64>>,
    parts: BTreeMap<String, Vec<usize>>,
}

/// Unit normals of every face, `normalize((b - a) x (c - a))`.
///
/// The normal direction follows the stored winding order. A face whose
/// cross product is numerically zero relative to its longest edge is
/// rejected as degenerate.
pub fn compute_face_normals(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
) -> Result<Vec<Vector3<f64>>, MeshError> {
    let mut normals = Vec::with_capacity(triangles.len());
    for (index, tri) in triangles.iter().enumerate() {
        let [a, b, c] = [
            vertices[tri[0] as usize],
            vertices[tri[1] as usize],
            vertices[tri[2] as usize],
        ];
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
        if norm <= 1e-12 * longest * longest || norm == 0.0 {
            return Err(MeshError::DegenerateTriangle { index });
        }
        normals.push(cross / norm);
    }
    Ok(normals)
}

impl TriangleMesh {
    /// Builds a mesh, validating indices and part disjointness and
    /// computing flat face normals.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        parts: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, MeshError> {
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= vertices.len() {
                    return Err(MeshError::VertexIndexOutOfRange {
                        triangle: t,
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
        }
        let mut owner = vec![false; triangles.len()];
        for (name, members) in &parts {
            for &t in members {
                if t >= triangles.len() {
                    return Err(MeshError::PartIndexOutOfRange {
                        part: name.clone(),
                        index: t,
                        count: triangles.len(),
                    });
                }
                if owner[t] {
                    return Err(MeshError::OverlappingParts { triangle: t });
                }
                owner[t] = true;
            }
        }
        let normals = compute_face_normals(&vertices, &triangles)?;
        let mut parts = parts;
        for members in parts.values_mut() {
            members.sort_unstable();
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            normals,
            parts,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Flat unit normal of each face, in model coordinates.
    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// Explicitly named parts and the triangle indices they own.
    pub fn parts(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.parts
    }

    /// Part names in lexicographic order, including the implicit `"body"`
    /// part when any triangle is unassigned.
    pub fn part_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.parts.keys().cloned().collect();
        let assigned: usize = self.parts.values().map(Vec::len).sum();
        if assigned < self.triangles.len() && !self.parts.contains_key(IMPLICIT_PART) {
            names.push(String::from(IMPLICIT_PART));
            names.sort_unstable();
        }
        names
    }

    /// 1-based identifier of a part in [`Self::part_names`] order.
    pub fn part_id(&self, name: &str) -> Option<u16> {
        self.part_names()
            .iter()
            .position(|n| n == name)
            .map(|i| (i + 1) as u16)
    }

    /// Per-triangle part identifiers (aligned with [`Self::part_names`]).
    pub fn triangle_part_ids(&self) -> Vec<u16> {
        let names = self.part_names();
        let id_of = |name: &str| -> u16 {
            (names.iter().position(|n| n == name).expect("part listed") + 1) as u16
        };
        let implicit = if names.iter().any(|n| n == IMPLICIT_PART) {
            id_of(IMPLICIT_PART)
        } else {
            0
        };
        let mut ids = vec![implicit; self.triangles.len()];
        for (name, members) in &self.parts {
            let id = id_of(name);
            for &t in members {
                ids[t] = id;
            }
        }
        ids
    }

    /// Largest vertex distance from the vertex centroid; a scale proxy
    /// used for perspective-limit checks.
    pub fn bounding_radius(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let centroid = self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64;
        self.vertices
            .iter()
            .map(|v| (v - centroid).norm())
            .fold(0.0, f64::max)
    }

    /// Structural findings that do not prevent use of the mesh. Currently:
    /// shared edges traversed twice in the same direction, which indicates
    /// inconsistent winding between neighbouring faces.
    pub fn winding_warnings(&self) -> Vec<ValidationWarning> {
        let mut directed: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let edge = (tri[e], tri[(e + 1) % 3]);
                *directed.entry(edge).or_insert(0) += 1;
            }
        }
        let repeated = directed.values().filter(|&&c| c > 1).count();
        if repeated > 0 {
            vec![ValidationWarning::InconsistentWinding {
                edge_count: repeated,
            }]
        } else {
            Vec::new()
        }
    }
}

/// Wheel anchors of a car-like model in model coordinates: the visible
/// rear wheel centre, the front wheel centre on the same side, and the
/// unit direction of the rear axle (pointing from the visible wheel
/// through the car).
#[derive(Debug, Clone, PartialEq)]
pub struct CarModelDatum {
    pub rear_wheel_center: Vector3<f64>,
    pub front_wheel_center: Vector3<f64>,
    pub rear_axle_dir: Vector3<f64>,
}

impl CarModelDatum {
    /// Validates and normalizes the datum. The wheel centres must be
    /// distinct and the axle direction must have nonzero length.
    pub fn new(
        rear_wheel_center: Vector3<f64>,
        front_wheel_center: Vector3<f64>,
        rear_axle_dir: Vector3<f64>,
    ) -> Result<Self, MeshError> {
        let wheelbase = front_wheel_center - rear_wheel_center;
        if !(rear_wheel_center.iter().all(|v| v.is_finite())
            && front_wheel_center.iter().all(|v| v.is_finite())
            && rear_axle_dir.iter().all(|v| v.is_finite()))
        {
            return Err(MeshError::DegenerateDatum(String::from(
                "non-finite component in datum",
            )));
        }
        if wheelbase.norm() == 0.0 {
            return Err(MeshError::DegenerateDatum(format!(
                "wheel centres coincide at {:?}",
                rear_wheel_center
            )));
        }
        let n = rear_axle_dir.norm();
        if n < 1e-12 {
            return Err(MeshError::DegenerateDatum(String::from(
                "rear axle direction has zero length",
            )));
        }
        Ok(CarModelDatum {
            rear_wheel_center,
            front_wheel_center,
            rear_axle_dir: rear_axle_dir / n,
        })
    }

    /// Vector from the rear to the front wheel centre.
    pub fn wheelbase(&self) -> Vector3<f64> {
        self.front_wheel_center - self.rear_wheel_center
    }
}
