//! Triangle meshes: parsing, hand-scale normalization, mass properties,
//! area-weighted surface sampling and procedural test objects.

mod io;
mod procedural;

pub use io::{load_mesh, parse_mesh, write_obj, MeshFormat, ParsedMesh};
pub use procedural::{procedural_object, ShapeSpec};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotmath::{cross3, dot3, norm3, scale3, sub3, RotMat, Vec3};

/// Faces with area at or below this are dropped.
pub const MIN_FACE_AREA: f64 = 1e-14;
/// Default point-cloud size.
pub const DEFAULT_CLOUD_POINTS: usize = 128;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no valid faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index}, but only {count} vertices exist")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("axis extent {0:e} is degenerate")]
    DegenerateExtent(f64),
    #[error("enclosed volume {0:e} is not positive")]
    NonPositiveVolume(f64),
    #[error("bad shape spec: {0}")]
    BadSpec(String),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Immutable triangle mesh in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    name: String,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
    // running sum of face areas, for sampling
    cumulative_area: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh, dropping faces with area ≤ [`MIN_FACE_AREA`].
    /// Returns the mesh and the number of dropped faces.
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<(Self, usize)> {
        let mut kept = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut cumulative = Vec::with_capacity(faces.len());
        let mut total = 0.0;
        let mut dropped = 0;
        for (fi, face) in faces.into_iter().enumerate() {
            for &index in &face {
                if index >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index,
                        count: vertices.len(),
                    });
                }
            }
            let [a, b, c] = face.map(|i| vertices[i]);
            let n = cross3(&sub3(&b, &a), &sub3(&c, &a));
            let len = norm3(&n);
            let area = 0.5 * len;
            if !(area > MIN_FACE_AREA) {
                dropped += 1;
                continue;
            }
            kept.push(face);
            normals.push(scale3(&n, 1.0 / len));
            total += area;
            cumulative.push(total);
        }
        if kept.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        Ok((
            Self {
                name: name.into(),
                vertices,
                faces: kept,
                face_normals: normals,
                cumulative_area: cumulative,
            },
            dropped,
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let prev = if face == 0 {
            0.0
        } else {
            self.cumulative_area[face - 1]
        };
        self.cumulative_area[face] - prev
    }

    pub fn surface_area(&self) -> f64 {
        *self.cumulative_area.last().expect("mesh is non-empty")
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Aabb { min, max }
    }

    /// Applies `v ↦ (v + offset) * scale` to every vertex.
    pub fn transformed(&self, offset: Vec3, scale: f64) -> Result<Mesh> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                [
                    (v[0] + offset[0]) * scale,
                    (v[1] + offset[1]) * scale,
                    (v[2] + offset[2]) * scale,
                ]
            })
            .collect();
        Mesh::new(self.name.clone(), vertices, self.faces.clone()).map(|(m, _)| m)
    }

    /// Signed enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                dot3(&a, &cross3(&b, &c)) / 6.0
            })
            .sum()
    }

    /// Inertia tensor (kg·m², row-major) of the uniform-density solid bounded
    /// by the mesh, about the AABB center, by signed tetrahedron decomposition.
    pub fn inertia_tensor(&self, mass: f64) -> Result<[[f64; 3]; 3]> {
        let center = self.aabb().center();
        let mut volume = 0.0;
        // second moment ∫ r rᵀ dV about the center
        let mut second = [[0.0; 3]; 3];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| sub3(&self.vertices[i], &center));
            let v = dot3(&a, &cross3(&b, &c)) / 6.0;
            volume += v;
            let s = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
            for i in 0..3 {
                for j in 0..3 {
                    second[i][j] += v / 20.0
                        * (a[i] * a[j] + b[i] * b[j] + c[i] * c[j] + s[i] * s[j]);
                }
            }
        }
        if !(volume > 1e-12) {
            return Err(MeshError::NonPositiveVolume(volume));
        }
        let density = mass / volume;
        let trace = second[0][0] + second[1][1] + second[2][2];
        let mut inertia = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { trace } else { 0.0 };
                inertia[i][j] = density * (id - second[i][j]);
            }
        }
        // enforce exact symmetry
        for i in 0..3 {
            for j in (i + 1)..3 {
                let m = 0.5 * (inertia[i][j] + inertia[j][i]);
                inertia[i][j] = m;
                inertia[j][i] = m;
            }
        }
        Ok(inertia)
    }

    /// Recenters at the AABB center and scales uniformly so the shortest
    /// extent equals `target_shortest`, unless that makes the longest extent
    /// exceed `longest_cap`, in which case the longest extent is set to the cap.
    pub fn normalize_scale(&self, target_shortest: f64, longest_cap: f64) -> Result<Mesh> {
        let aabb = self.aabb();
        let ext = aabb.extents();
        for e in ext {
            if !(e > 1e-9) {
                return Err(MeshError::DegenerateExtent(e));
            }
        }
        let shortest = ext.iter().copied().fold(f64::INFINITY, f64::min);
        let longest = ext.iter().copied().fold(0.0, f64::max);
        let mut scale = target_shortest / shortest;
        if longest * scale > longest_cap {
            scale = longest_cap / longest;
        }
        let c = aabb.center();
        self.transformed([-c[0], -c[1], -c[2]], scale)
    }

    /// Area-weighted uniform surface sample with per-face normals.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointCloud {
        let total = self.surface_area();
        let last = self.faces.len() - 1;
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let face = self.cumulative_area.partition_point(|&c| c <= u).min(last);
            let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
            points.push([
                wa * a[0] + wb * b[0] + wc * c[0],
                wa * a[1] + wb * b[1] + wc * c[1],
                wa * a[2] + wb * b[2] + wc * c[2],
            ]);
            normals.push(self.face_normals[face]);
        }
        PointCloud { points, normals }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn extents(&self) -> Vec3 {
        sub3(&self.max, &self.min)
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - slack && p[k] <= self.max[k] + slack)
    }
}

/// Surface points with unit normals, in whatever frame they were produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rotated(&self, r: &RotMat) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| r.apply(p)).collect(),
            normals: self.normals.iter().map(|n| r.apply(n)).collect(),
        }
    }

    /// Reorders points (and normals) by `order`.
    pub fn permuted(&self, order: &[usize]) -> PointCloud {
        PointCloud {
            points: order.iter().map(|&i| self.points[i]).collect(),
            normals: order.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}
