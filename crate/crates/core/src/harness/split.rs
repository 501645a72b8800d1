use serde::{Deserialize, Serialize};

use super::train::{train, TrainOptions, TrainingSet};
use super::{HarnessError, Result, RunConfig};

/// Test share of the paper-scale split (29 of 114 objects).
pub const DEFAULT_TEST_RATIO: f64 = 29.0 / 114.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Indices into the scored object list.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_mean: f64,
    pub test_mean: f64,
}

/// Sorts objects by score (highest first, ties by index) and deals them so
/// that the test set takes every `1/ratio`-th object. At ratio 0.5 this is
/// strict alternation starting with the training set.
pub fn split_by_scores(scores: &[f64], ratio: f64) -> Result<Split> {
    if scores.len() < 4 {
        return Err(HarnessError::TooFewObjects {
            needed: 4,
            got: scores.len(),
        });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HarnessError::Config(format!("split ratio {ratio} must be in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let dealt = |i: usize| (i as f64 * ratio + 1e-9).floor() as usize;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &obj) in order.iter().enumerate() {
        if dealt(i + 1) > dealt(i) {
            test.push(obj);
        } else {
            train.push(obj);
        }
    }
    let mean = |ix: &[usize]| ix.iter().map(|&i| scores[i]).sum::<f64>() / ix.len().max(1) as f64;
    Ok(Split {
        train_mean: mean(&train),
        test_mean: mean(&test),
        train,
        test,
    })
}

/// Final success of a short single-object probe run per object.
pub fn difficulty_scores(
    config: &RunConfig,
    set: &TrainingSet,
    probe_epochs: usize,
    options: &TrainOptions,
) -> Result<Vec<f64>> {
    let mut probe = config.clone();
    probe.epochs = probe_epochs;
    probe.eval_every = probe_epochs.max(1);
    probe.checkpoint_every = probe_epochs.max(1);
    set.objects
        .iter()
        .map(|obj| {
            let mut c = probe.clone();
            c.train_objects = vec![obj.name.clone()];
            let mut one = obj.as_ref().clone();
            one.id = 0;
            let sub = TrainingSet {
                objects: vec![std::sync::Arc::new(one)],
                heldout: Vec::new(),
                encoder: set.encoder.clone(),
            };
            Ok(train(&c, sub, None, options)?.mean_train_success())
        })
        .collect()
}

/// Probe-scored, difficulty-balanced split of `set.objects`.
pub fn split_objects(
    config: &RunConfig,
    set: &TrainingSet,
    probe_epochs: usize,
    ratio: f64,
    options: &TrainOptions,
) -> Result<(Split, Vec<f64>)> {
    if set.objects.len() < 4 {
        return Err(HarnessError::TooFewObjects {
            needed: 4,
            got: set.objects.len(),
        });
    }
    let scores = difficulty_scores(config, set, probe_epochs, options)?;
    Ok((split_by_scores(&scores, ratio)?, scores))
}
