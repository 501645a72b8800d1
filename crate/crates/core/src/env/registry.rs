use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EnvError, Mat3, Result};
use crate::mesh::{load_mesh, procedural_object, write_obj, Mesh, ShapeSpec};

pub const TARGET_SHORTEST: f64 = 0.057;
pub const LONGEST_CAP: f64 = 0.130;

/// A normalized object with its precomputed inertia.
#[derive(Debug, Clone)]
pub struct RigidObject {
    pub id: usize,
    pub name: String,
    pub mesh: Mesh,
    pub mass: f64,
    pub inertia: Mat3,
}

impl RigidObject {
    /// Normalizes `mesh` to hand scale and computes its inertia.
    pub fn from_raw_mesh(id: usize, mesh: &Mesh, mass: f64) -> Result<Self> {
        let mesh = mesh.normalize_scale(TARGET_SHORTEST, LONGEST_CAP)?;
        Self::from_normalized(id, mesh, mass)
    }

    pub fn from_normalized(id: usize, mesh: Mesh, mass: f64) -> Result<Self> {
        let inertia = mesh.inertia_tensor(mass)?;
        Ok(Self {
            id,
            name: mesh.name().to_string(),
            mesh,
            mass,
            inertia,
        })
    }

    pub fn from_spec(id: usize, spec: &ShapeSpec, mass: f64) -> Result<Self> {
        let mesh = procedural_object(spec)?;
        Self::from_raw_mesh(id, &mesh, mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub name: String,
    /// Normalized mesh file, relative to the registry file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    /// Procedural source; used when `mesh` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ShapeSpec>,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<Mat3>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRegistry {
    pub objects: Vec<ObjectEntry>,
}

impl ObjectRegistry {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Builds every object; ids follow registry order.
    pub fn build(&self, base_dir: &Path) -> Result<Vec<Arc<RigidObject>>> {
        let mut names = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.objects.len());
        for (id, e) in self.objects.iter().enumerate() {
            if !names.insert(e.name.as_str()) {
                return Err(EnvError::Registry(format!("duplicate object name {:?}", e.name)));
            }
            if !(e.mass > 0.0) {
                return Err(EnvError::Registry(format!("{}: mass must be positive", e.name)));
            }
            let mut obj = match (&e.mesh, &e.spec) {
                (Some(p), _) => {
                    let mesh = load_mesh(&base_dir.join(p))?.mesh.with_name(e.name.clone());
                    RigidObject::from_normalized(id, mesh, e.mass)?
                }
                (None, Some(spec)) => RigidObject::from_spec(id, spec, e.mass)?,
                (None, None) => {
                    return Err(EnvError::Registry(format!(
                        "{}: needs a mesh path or a spec",
                        e.name
                    )))
                }
            };
            obj.name = e.name.clone();
            if let Some(i) = e.inertia {
                obj.inertia = i;
            }
            out.push(Arc::new(obj));
        }
        Ok(out)
    }

    pub fn load_objects(path: &Path) -> Result<Vec<Arc<RigidObject>>> {
        let reg = Self::load(path)?;
        reg.build(path.parent().unwrap_or(Path::new(".")))
    }

    /// Writes normalized meshes as OBJ files plus `registry.json` into `dir`.
    pub fn write_objects(dir: &Path, objects: &[(String, Mesh, Option<ShapeSpec>)], mass: f64) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut reg = ObjectRegistry::default();
        for (name, raw, spec) in objects {
            let obj = RigidObject::from_raw_mesh(reg.objects.len(), raw, mass)?;
            let file = format!("{name}.obj");
            std::fs::write(dir.join(&file), write_obj(&obj.mesh))?;
            reg.objects.push(ObjectEntry {
                name: name.clone(),
                mesh: Some(PathBuf::from(file)),
                spec: spec.clone(),
                mass,
                inertia: Some(obj.inertia),
            });
        }
        reg.save(&dir.join("registry.json"))?;
        Ok(reg)
    }
}

/// Named procedural object sets. Sizes are arbitrary; objects are
/// normalized to hand scale when built.
pub fn preset(name: &str) -> Option<Vec<(String, ShapeSpec)>> {
    let all = |names: &[&str]| -> Vec<(String, ShapeSpec)> {
        names
            .iter()
            .map(|n| (n.to_string(), named_shape(n).expect("preset shapes exist")))
            .collect()
    };
    match name {
        "basic4" => Some(all(&["cube", "cylinder", "slab", "ellipsoid"])),
        "basic8" => Some(all(&[
            "cube", "cylinder", "slab", "ellipsoid", "sphere", "rounded_cube", "rod", "disk",
        ])),
        "heldout2" => Some(all(&["long_capsule", "pebble"])),
        _ => None,
    }
}

pub const PRESETS: [&str; 3] = ["basic4", "basic8", "heldout2"];

pub fn named_shape(name: &str) -> Option<ShapeSpec> {
    let s = 3;
    Some(match name {
        "cube" => ShapeSpec::Box {
            size: [1.0, 1.0, 1.0],
        },
        "cylinder" => ShapeSpec::Cylinder {
            radius: 0.5,
            height: 2.0,
            subdivision: s,
        },
        "slab" => ShapeSpec::Box {
            size: [2.0, 1.0, 0.3],
        },
        "ellipsoid" => ShapeSpec::Ellipsoid {
            radii: [1.0, 0.6, 0.35],
            subdivision: s,
        },
        "sphere" => ShapeSpec::Ellipsoid {
            radii: [1.0, 1.0, 1.0],
            subdivision: s,
        },
        "rounded_cube" => ShapeSpec::Superellipsoid {
            radii: [1.0, 1.0, 1.0],
            e1: 0.3,
            e2: 0.3,
            subdivision: s,
        },
        "rod" => ShapeSpec::Box {
            size: [3.0, 0.5, 0.5],
        },
        "disk" => ShapeSpec::Cylinder {
            radius: 1.0,
            height: 0.3,
            subdivision: s,
        },
        // high aspect ratio
        "long_capsule" => ShapeSpec::Superellipsoid {
            radii: [2.5, 0.55, 0.5],
            e1: 0.6,
            e2: 0.8,
            subdivision: s,
        },
        // near-spherical
        "pebble" => ShapeSpec::Ellipsoid {
            radii: [1.0, 0.93, 0.87],
            subdivision: s,
        },
        _ => return None,
    })
}
