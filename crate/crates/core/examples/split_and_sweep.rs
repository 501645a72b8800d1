//! Difficulty-balanced train/test split from short probe runs, then a
//! small scaling sweep over training-set size.

use geodex::agent::PolicyMode;
use geodex::env::{preset, ObjectRegistry};
use geodex::harness::{scaling_sweep, split_objects, RunConfig, TrainOptions, TrainingSet};
use geodex::mesh::procedural_object;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("geodex-split");
    for name in ["basic8", "heldout2"] {
        let objs = preset(name)
            .unwrap()
            .into_iter()
            .map(|(n, s)| Ok((n, procedural_object(&s)?, Some(s))))
            .collect::<Result<Vec<_>, geodex::mesh::MeshError>>()?;
        ObjectRegistry::write_objects(&dir.join(name), &objs, 0.2)?;
    }
    let mut c = RunConfig {
        objects: dir.join("basic8").join("registry.json"),
        heldout: Some(dir.join("heldout2").join("registry.json")),
        epochs: 3,
        updates_per_epoch: 50,
        eval_episodes: 10,
        ..RunConfig::default()
    };
    c.agent.hidden = vec![64, 64];
    c.agent.batch = 64;
    let c = c.resolved();
    let set = TrainingSet::load(&c)?;
    let opts = TrainOptions::default();

    let (split, scores) = split_objects(&c, &set, 3, 0.5, &opts)?;
    for (o, s) in set.objects.iter().zip(&scores) {
        println!("probe {:<13} {s:.3}", o.name);
    }
    let names = |ix: &[usize]| ix.iter().map(|&i| set.objects[i].name.as_str()).collect::<Vec<_>>().join(", ");
    println!("train [{}] mean {:.3}", names(&split.train), split.train_mean);
    println!("test  [{}] mean {:.3}", names(&split.test), split.test_mean);

    let rows = scaling_sweep(&c, &set, &[2, 4], &[PolicyMode::Vanilla], &[0], Some(&dir.join("sweep")), &opts)?;
    for r in rows {
        println!("n={} {}: train {:.3} heldout {:.3}", r.count, r.mode, r.train_success, r.heldout_success);
    }
    println!("table in {}", dir.join("sweep").join("sweep.csv").display());
    Ok(())
}
