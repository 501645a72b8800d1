use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{child_dir, train, TrainOptions, TrainingSet};
use super::{HarnessError, Result, RunConfig};
use crate::agent::PolicyMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub count: usize,
    pub mode: PolicyMode,
    pub seed: u64,
    pub train_success: f64,
    pub heldout_success: f64,
}

/// Trains on the first `count` objects of `set` for every count, mode and
/// seed, always evaluating on the same held-out objects. Writes
/// `sweep.csv` (and one run directory per cell) when `out_dir` is given.
pub fn scaling_sweep(
    config: &RunConfig,
    set: &TrainingSet,
    counts: &[usize],
    modes: &[PolicyMode],
    seeds: &[u64],
    out_dir: Option<&Path>,
    options: &TrainOptions,
) -> Result<Vec<SweepRow>> {
    if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > set.objects.len()) {
        return Err(HarnessError::Config(format!(
            "count {c} outside 1..={}",
            set.objects.len()
        )));
    }
    if set.heldout.is_empty() {
        return Err(HarnessError::Config("a scaling sweep needs held-out objects".into()));
    }
    let mut rows = Vec::new();
    for &count in counts {
        for &mode in modes {
            for &seed in seeds {
                let mut c = config.clone();
                c.mode = mode;
                c.seed = seed;
                c.train_objects = set.objects[..count].iter().map(|o| o.name.clone()).collect();
                let geometry = mode == PolicyMode::GeometryAware;
                if !geometry {
                    c.encoder = None;
                    c.finetune_encoder = false;
                } else if set.encoder.is_none() {
                    return Err(HarnessError::Config("geometry-aware sweep needs an encoder".into()));
                }
                let c = c.resolved();
                let mut heldout = Vec::with_capacity(set.heldout.len());
                for (i, h) in set.heldout.iter().enumerate() {
                    let mut h = h.as_ref().clone();
                    h.id = count + i;
                    heldout.push(std::sync::Arc::new(h));
                }
                let sub = TrainingSet {
                    objects: set.objects[..count].to_vec(),
                    heldout,
                    encoder: if geometry { set.encoder.clone() } else { None },
                };
                let dir = child_dir(out_dir, &format!("n{count}-{mode}-s{seed}"));
                let r = train(&c, sub, dir.as_deref(), options)?;
                rows.push(SweepRow {
                    count,
                    mode,
                    seed,
                    train_success: r.mean_train_success(),
                    heldout_success: r.mean_heldout_success(),
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(rows)
}
