//! Interrupt a run, resume it from its checkpoint and confirm the metrics
//! match an uninterrupted run byte for byte; then export the CSV report.

use geodex::env::{preset, ObjectRegistry};
use geodex::harness::{report, train_multi, RunConfig, TrainOptions, REPORT_HEADER};
use geodex::mesh::procedural_object;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("geodex-resume");
    let _ = std::fs::remove_dir_all(&dir);
    let objs = preset("basic4")
        .unwrap()
        .into_iter()
        .take(2)
        .map(|(n, s)| Ok((n, procedural_object(&s)?, Some(s))))
        .collect::<Result<Vec<_>, geodex::mesh::MeshError>>()?;
    ObjectRegistry::write_objects(&dir.join("objects"), &objs, 0.2)?;
    let mut c = RunConfig {
        objects: dir.join("objects").join("registry.json"),
        epochs: 4,
        updates_per_epoch: 40,
        eval_episodes: 5,
        checkpoint_every: 1,
        seed: 3,
        ..RunConfig::default()
    };
    c.agent.hidden = vec![64, 64];
    c.agent.batch = 32;
    let c = c.resolved();

    let whole = dir.join("whole");
    train_multi(&c, Some(&whole), &TrainOptions::default())?;

    let parts = dir.join("parts");
    train_multi(&c, Some(&parts), &TrainOptions { stop_after: Some(2), ..Default::default() })?;
    println!("stopped after epoch 2");
    train_multi(&c, Some(&parts), &TrainOptions { resume: true, ..Default::default() })?;

    let a = std::fs::read(whole.join("metrics.jsonl"))?;
    let b = std::fs::read(parts.join("metrics.jsonl"))?;
    println!("resumed metrics identical: {}", a == b);

    let rows = report(&parts)?;
    println!("{}", REPORT_HEADER.join(","));
    for r in rows.iter().rev().take(4).rev() {
        println!("{}", r.join(","));
    }
    Ok(())
}
