//! Pretrain the paired-cloud encoder to classify objects and regress the
//! relative rotation between the two copies.
//!
//! `cargo run --release --example pretrain_encoder -- [steps]`

use geodex::encoder::{encode, pretrain, PretrainConfig};
use geodex::env::{preset, RigidObject};
use geodex::rotmath::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map_or(Ok(1000), |s| s.parse())?;
    let objects = preset("basic4").expect("preset");
    let meshes = objects
        .iter()
        .map(|(_, s)| Ok(RigidObject::from_spec(0, s, 0.2)?.mesh))
        .collect::<Result<Vec<_>, geodex::env::EnvError>>()?;
    let config = PretrainConfig {
        trunk: vec![32, 64, 512],
        points: 64,
        steps,
        log_every: 100,
        val_every: 250,
        ..PretrainConfig::default()
    };
    let out = std::env::temp_dir().join("geodex-encoder");
    let r = pretrain(&meshes, &config, Some(&out))?;
    println!(
        "after {steps} steps: validation accuracy {:.3}, rotation error {:.3} rad",
        r.validation.acc, r.validation.rot_err_rad
    );
    println!("checkpoint {}", out.join("encoder.gdx").display());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = meshes[2].sample_surface(64, &mut rng);
    let goal = cloud.rotated(&UnitQuaternion::about_z(1.0).to_matrix());
    let f = encode(&r.model, &cloud, &goal)?;
    let active = f.iter().filter(|v| **v > 0.0).count();
    println!("feature of a slab pair: {} dims, {active} active", f.len());
    Ok(())
}
