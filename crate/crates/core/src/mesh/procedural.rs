use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Mesh, MeshError, Result};
use crate::rotmath::{cross3, dot3, sub3, Vec3};

/// Parametric closed solids centered at the origin.
///
/// `subdivision = s` gives `4·2^s` segments around and `2·2^s` rings from
/// pole to pole (cylinders use `4·2^s` segments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ShapeSpec {
    Box {
        size: [f64; 3],
    },
    Ellipsoid {
        radii: [f64; 3],
        subdivision: u32,
    },
    Cylinder {
        radius: f64,
        height: f64,
        subdivision: u32,
    },
    /// Barr superellipsoid: `e1` shapes the meridians, `e2` the parallels.
    /// Exponents of 1 give the ellipsoid with the same radii.
    Superellipsoid {
        radii: [f64; 3],
        e1: f64,
        e2: f64,
        subdivision: u32,
    },
}

impl ShapeSpec {
    /// Deterministic name derived from the parameters.
    pub fn name(&self) -> String {
        match self {
            ShapeSpec::Box { size } => format!("box_{}x{}x{}", size[0], size[1], size[2]),
            ShapeSpec::Ellipsoid { radii, subdivision } => {
                format!("ellipsoid_{}x{}x{}_s{}", radii[0], radii[1], radii[2], subdivision)
            }
            ShapeSpec::Cylinder {
                radius,
                height,
                subdivision,
            } => format!("cylinder_r{}_h{}_s{}", radius, height, subdivision),
            ShapeSpec::Superellipsoid {
                radii,
                e1,
                e2,
                subdivision,
            } => format!(
                "superellipsoid_{}x{}x{}_e{}_{}_s{}",
                radii[0], radii[1], radii[2], e1, e2, subdivision
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |vals: &[f64]| vals.iter().all(|v| v.is_finite() && *v > 0.0);
        let (ok, sub) = match self {
            ShapeSpec::Box { size } => (positive(size), 1),
            ShapeSpec::Ellipsoid { radii, subdivision } => (positive(radii), *subdivision),
            ShapeSpec::Cylinder {
                radius,
                height,
                subdivision,
            } => (positive(&[*radius, *height]), *subdivision),
            ShapeSpec::Superellipsoid {
                radii,
                e1,
                e2,
                subdivision,
            } => (positive(radii) && positive(&[*e1, *e2]), *subdivision),
        };
        if !ok {
            return Err(MeshError::BadSpec(format!("non-positive parameter in {self:?}")));
        }
        if !(1..=8).contains(&sub) {
            return Err(MeshError::BadSpec(format!("subdivision {sub} outside 1..=8")));
        }
        Ok(())
    }
}

/// Builds the closed, outward-oriented triangle mesh for `spec`.
pub fn procedural_object(spec: &ShapeSpec) -> Result<Mesh> {
    spec.validate()?;
    let (vertices, faces) = match *spec {
        ShapeSpec::Box { size } => box_mesh(size),
        ShapeSpec::Ellipsoid { radii, subdivision } => {
            latlong_mesh(radii, subdivision, |eta, theta| {
                let (se, ce) = eta.sin_cos();
                let (st, ct) = theta.sin_cos();
                [ce * ct, ce * st, se]
            })
        }
        ShapeSpec::Superellipsoid {
            radii,
            e1,
            e2,
            subdivision,
        } => latlong_mesh(radii, subdivision, |eta, theta| {
            let (se, ce) = eta.sin_cos();
            let (st, ct) = theta.sin_cos();
            let ce1 = signed_pow(ce, e1);
            [ce1 * signed_pow(ct, e2), ce1 * signed_pow(st, e2), signed_pow(se, e1)]
        }),
        ShapeSpec::Cylinder {
            radius,
            height,
            subdivision,
        } => cylinder_mesh(radius, height, subdivision),
    };
    Mesh::new(spec.name(), vertices, faces).map(|(m, _)| m)
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

fn box_mesh(size: [f64; 3]) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let h = size.map(|s| 0.5 * s);
    let vertices: Vec<Vec3> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let mut faces = Vec::with_capacity(12);
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    orient_outward(&vertices, &mut faces);
    (vertices, faces)
}

/// Flips faces of a star-shaped (about the origin) mesh to face outward.
fn orient_outward(vertices: &[Vec3], faces: &mut [[usize; 3]]) {
    for f in faces.iter_mut() {
        let [a, b, c] = f.map(|i| vertices[i]);
        let n = cross3(&sub3(&b, &a), &sub3(&c, &a));
        let centroid = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        if dot3(&n, &centroid) < 0.0 {
            f.swap(1, 2);
        }
    }
}

/// Pole-capped latitude/longitude grid; `surface(η, θ)` returns the unit
/// shape point for latitude η ∈ (−π/2, π/2) and longitude θ.
fn latlong_mesh(
    radii: [f64; 3],
    subdivision: u32,
    surface: impl Fn(f64, f64) -> Vec3,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let segments = 4usize << subdivision;
    let rings = 2usize << subdivision;
    let mut vertices = vec![[0.0, 0.0, radii[2]]];
    for i in 1..rings {
        let eta = 0.5 * PI - PI * i as f64 / rings as f64;
        for j in 0..segments {
            let theta = 2.0 * PI * j as f64 / segments as f64;
            let u = surface(eta, theta);
            vertices.push([radii[0] * u[0], radii[1] * u[1], radii[2] * u[2]]);
        }
    }
    vertices.push([0.0, 0.0, -radii[2]]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + (j % segments);

    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for j in 0..segments {
        faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    (vertices, faces)
}

fn cylinder_mesh(radius: f64, height: f64, subdivision: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let segments = 4usize << subdivision;
    let h = 0.5 * height;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for z in [-h, h] {
        for j in 0..segments {
            let (s, c) = (2.0 * PI * j as f64 / segments as f64).sin_cos();
            vertices.push([radius * c, radius * s, z]);
        }
    }
    vertices.push([0.0, 0.0, -h]);
    vertices.push([0.0, 0.0, h]);
    let (bottom_center, top_center) = (2 * segments, 2 * segments + 1);
    let b = |j: usize| j % segments;
    let t = |j: usize| segments + j % segments;
    let mut faces = Vec::with_capacity(4 * segments);
    for j in 0..segments {
        faces.push([b(j), b(j + 1), t(j + 1)]);
        faces.push([b(j), t(j + 1), t(j)]);
        faces.push([top_center, t(j), t(j + 1)]);
        faces.push([bottom_center, b(j + 1), b(j)]);
    }
    (vertices, faces)
}
