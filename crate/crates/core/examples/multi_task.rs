//! One policy for several objects: vanilla versus geometry-aware, with
//! zero-shot evaluation on held-out shapes. Pretrains a small encoder
//! first.
//!
//! `cargo run --release --example multi_task -- [epochs] [pretrain steps]`

use geodex::agent::PolicyMode;
use geodex::encoder::{pretrain, PretrainConfig};
use geodex::env::{preset, ObjectRegistry};
use geodex::harness::{train_multi, RunConfig, TrainOptions};
use geodex::mesh::procedural_object;

fn write(dir: &std::path::Path, name: &str) -> Result<(), Box<dyn std::error::Error>> {
    let objs = preset(name)
        .unwrap()
        .into_iter()
        .map(|(n, s)| Ok((n, procedural_object(&s)?, Some(s))))
        .collect::<Result<Vec<_>, geodex::mesh::MeshError>>()?;
    ObjectRegistry::write_objects(&dir.join(name), &objs, 0.2)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let steps: usize = args.next().map_or(Ok(1500), |s| s.parse())?;
    let dir = std::env::temp_dir().join("geodex-multi");
    write(&dir, "basic4")?;
    write(&dir, "heldout2")?;

    let train_objects = ObjectRegistry::load_objects(&dir.join("basic4").join("registry.json"))?;
    let meshes: Vec<_> = train_objects.iter().map(|o| o.mesh.clone()).collect();
    let pc = PretrainConfig {
        trunk: vec![32, 64, 512],
        points: 64,
        steps,
        ..PretrainConfig::default()
    };
    let enc = pretrain(&meshes, &pc, Some(&dir.join("encoder")))?;
    println!("encoder: accuracy {:.3}, rotation error {:.3} rad", enc.validation.acc, enc.validation.rot_err_rad);

    for mode in [PolicyMode::Vanilla, PolicyMode::GeometryAware] {
        let mut c = RunConfig {
            mode,
            objects: dir.join("basic4").join("registry.json"),
            heldout: Some(dir.join("heldout2").join("registry.json")),
            epochs,
            updates_per_epoch: 100,
            ..RunConfig::default()
        };
        if mode == PolicyMode::GeometryAware {
            c.encoder = Some(dir.join("encoder").join("encoder.gdx"));
        }
        c.env.cloud_points = 16;
        c.agent.hidden = vec![128; 3];
        c.agent.batch = 64;
        let r = train_multi(&c.resolved(), Some(&dir.join(mode.to_string())), &TrainOptions::default())?;
        println!("{mode}: {:.0}s", r.wall_clock_s);
        for s in r.final_train.iter().chain(&r.final_heldout) {
            println!("  {:<13} {:.3}", s.object, s.success);
        }
    }
    Ok(())
}
