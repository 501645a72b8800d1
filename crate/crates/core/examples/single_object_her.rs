//! DDPG with hindsight relabeling on one object, next to the same run with
//! relabeling switched off.
//!
//! `cargo run --release --example single_object_her -- [epochs]`

use std::path::PathBuf;

use geodex::env::{preset, ObjectRegistry};
use geodex::harness::{train_single, RunConfig, TrainOptions};
use geodex::mesh::procedural_object;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    let dir = std::env::temp_dir().join("geodex-single");
    let (name, spec) = preset("basic4").unwrap().remove(0);
    ObjectRegistry::write_objects(&dir.join("objects"), &[(name, procedural_object(&spec)?, Some(spec))], 0.2)?;

    for k in [4.0, 0.0] {
        let mut c = RunConfig {
            objects: dir.join("objects").join("registry.json"),
            epochs,
            updates_per_epoch: 200,
            ..RunConfig::default()
        };
        c.agent.hidden = vec![128; 3];
        c.agent.batch = 128;
        c.replay.relabel_k = k;
        let out: PathBuf = dir.join(format!("k{k}"));
        let r = train_single(&c.resolved(), Some(&out), &TrainOptions { progress: true, ..Default::default() })?;
        println!(
            "relabel_k {k}: final success {:.3} after {} samples ({:.0}s), metrics in {}",
            r.mean_train_success(),
            r.samples,
            r.wall_clock_s,
            out.display()
        );
    }
    Ok(())
}
