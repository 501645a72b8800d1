//! Generate the procedural object sets and write a registry that the
//! trainer can load.

use geodex::env::{preset, ObjectRegistry, PRESETS};
use geodex::mesh::procedural_object;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("geodex-objects");
    for name in PRESETS {
        let specs = preset(name).expect("listed preset");
        let meshes = specs
            .into_iter()
            .map(|(n, s)| Ok((n, procedural_object(&s)?, Some(s))))
            .collect::<Result<Vec<_>, geodex::mesh::MeshError>>()?;
        let dir = out.join(name);
        let reg = ObjectRegistry::write_objects(&dir, &meshes, 0.2)?;
        println!("{name}: {} objects in {}", reg.objects.len(), dir.display());
    }
    for o in ObjectRegistry::load_objects(&out.join("basic8").join("registry.json"))? {
        let e = o.mesh.aabb().extents();
        println!(
            "  {:<13} extents {:.3} {:.3} {:.3} m  Izz {:.3e} kg m^2",
            o.name, e[0], e[1], e[2], o.inertia[2][2]
        );
    }
    Ok(())
}
