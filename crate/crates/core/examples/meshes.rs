//! Parse meshes from text, normalize them to hand scale, compute mass
//! properties and sample paired point clouds.
//!
//! `cargo run --example meshes -- path/to/model.obj` also works on a file.

use geodex::mesh::{load_mesh, parse_mesh, MeshFormat};
use geodex::rotmath::UnitQuaternion;
use geodex::env::{LONGEST_CAP, TARGET_SHORTEST};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OFF_CUBE: &str = "OFF
8 6 0
-1 -1 -1
1 -1 -1
1 1 -1
-1 1 -1
-1 -1 1
1 -1 1
1 1 1
-1 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = match std::env::args().nth(1) {
        Some(path) => load_mesh(path.as_ref())?,
        None => parse_mesh(OFF_CUBE.as_bytes(), MeshFormat::Off)?,
    };
    let raw = parsed.mesh;
    println!(
        "{}: {} vertices, {} triangles, {} degenerate faces dropped",
        raw.name(),
        raw.vertices().len(),
        raw.faces().len(),
        parsed.dropped_faces
    );
    println!("raw extents {:?}, volume {:.4}", raw.aabb().extents(), raw.volume());

    let mesh = raw.normalize_scale(TARGET_SHORTEST, LONGEST_CAP)?;
    println!("normalized extents {:?} m", mesh.aabb().extents());
    let inertia = mesh.inertia_tensor(0.2)?;
    println!("inertia at 0.2 kg: diag {:.3e} {:.3e} {:.3e}", inertia[0][0], inertia[1][1], inertia[2][2]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cloud = mesh.sample_surface(8, &mut rng);
    let goal = cloud.rotated(&UnitQuaternion::about_z(0.5).to_matrix());
    for (p, g) in cloud.points.iter().zip(&goal.points).take(3) {
        println!("point {p:+.4?} -> goal copy {g:+.4?}");
    }
    Ok(())
}
