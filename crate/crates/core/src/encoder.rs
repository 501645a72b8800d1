//! Encoder pretraining (classification plus relative rotation) and the
//! frozen feature service used by geometry-aware policies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, PointCloud};
use crate::nn::{
    adam_step, cross_entropy, AdamConfig, AdamState, EncoderGrads, EncoderModel, NnError,
    FEATURE_DIM,
};
use crate::rotmath::{
    geodesic_angle, project_to_so3, project_to_so3_backward, random_rotation_so3, rotation_loss,
    RotError, RotMat,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder is frozen")]
    FrozenModel,
    #[error("encoder is not frozen")]
    NotFrozen,
    #[error("no objects to train on")]
    NoObjects,
    #[error("invalid pretraining config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rot(#[from] RotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone)]
pub struct PretrainItem {
    pub label: usize,
    pub current: PointCloud,
    pub goal: PointCloud,
    pub relative: RotMat,
}

#[derive(Debug, Clone, Default)]
pub struct PretrainBatch {
    pub items: Vec<PretrainItem>,
}

impl PretrainBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Largest deviation between stored goal points and `relative · current`.
    pub fn max_goal_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for it in &self.items {
            for (p, g) in it.current.points.iter().zip(&it.goal.points) {
                let q = it.relative.apply(p);
                for k in 0..3 {
                    worst = worst.max((q[k] - g[k]).abs());
                }
            }
        }
        worst
    }
}

/// Draws `batch` items: a uniform object, a surface sample, a uniform base
/// orientation applied to both copies and a uniform relative rotation
/// applied to the goal copy. With `identity_relative` the goal copy is the
/// current copy.
pub fn make_pretrain_batch<R: Rng + ?Sized>(
    objects: &[Mesh],
    batch: usize,
    points: usize,
    identity_relative: bool,
    rng: &mut R,
) -> Result<PretrainBatch> {
    if objects.is_empty() {
        return Err(EncoderError::NoObjects);
    }
    let mut items = Vec::with_capacity(batch);
    for _ in 0..batch {
        let label = rng.random_range(0..objects.len());
        let cloud = objects[label].sample_surface(points, rng);
        let base = random_rotation_so3(rng).to_matrix();
        let current = cloud.rotated(&base);
        let (goal, relative) = if identity_relative {
            (current.clone(), RotMat::IDENTITY)
        } else {
            let rel = random_rotation_so3(rng).to_matrix();
            (current.rotated(&rel), rel)
        };
        items.push(PretrainItem {
            label,
            current,
            goal,
            relative,
        });
    }
    Ok(PretrainBatch { items })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    #[serde(rename = "L_cls")]
    pub loss_cls: f64,
    #[serde(rename = "L_rot")]
    pub loss_rot: f64,
    #[serde(rename = "L_e")]
    pub loss: f64,
    pub acc: f64,
    pub rot_err_rad: f64,
}

/// Adam state for every parameter array of an encoder.
#[derive(Debug, Clone)]
pub struct EncoderOptimizer {
    states: [AdamState; 3],
}

impl EncoderOptimizer {
    pub fn new(model: &EncoderModel, config: AdamConfig) -> Self {
        Self {
            states: [
                AdamState::new(model.trunk().param_count(), config),
                AdamState::new(model.class_head().param_count(), config),
                AdamState::new(model.rot_head().param_count(), config),
            ],
        }
    }

    pub fn from_states(states: [AdamState; 3]) -> Self {
        Self { states }
    }

    /// Trunk, class head and rotation head states.
    pub fn states(&self) -> &[AdamState; 3] {
        &self.states
    }

    pub fn set_lr(&mut self, lr: f64) {
        for s in &mut self.states {
            s.config.lr = lr;
        }
    }

    pub fn step(&mut self, model: &mut EncoderModel, grads: &EncoderGrads) -> Result<()> {
        let [t, c, r] = model.params_mut();
        adam_step(t, &grads.trunk, &mut self.states[0])?;
        adam_step(c, &grads.class_head, &mut self.states[1])?;
        adam_step(r, &grads.rot_head, &mut self.states[2])?;
        Ok(())
    }
}

/// Batch-mean losses and their gradients, without touching parameters.
pub fn evaluate_batch(
    model: &EncoderModel,
    batch: &PretrainBatch,
    alpha: f64,
    grads: Option<&mut EncoderGrads>,
) -> Result<PretrainMetrics> {
    let n = batch.len();
    if n == 0 {
        return Err(EncoderError::Config("empty batch".into()));
    }
    let pairs: Vec<_> = batch.items.iter().map(|it| (&it.current, &it.goal)).collect();
    let enc = model.encode_batch(&pairs, true, grads.is_some())?;
    let c = model.classes();
    let inv = 1.0 / n as f64;
    let (mut l_cls, mut l_rot, mut correct, mut rot_err) = (0.0, 0.0, 0usize, 0.0);
    let mut g_logits = vec![0.0; n * c];
    let mut g_rot = vec![0.0; n * 6];
    for (i, it) in batch.items.iter().enumerate() {
        let logits = &enc.class_logits[i * c..(i + 1) * c];
        let (l, g) = cross_entropy(logits, it.label)?;
        l_cls += l;
        for (dst, v) in g_logits[i * c..(i + 1) * c].iter_mut().zip(g) {
            *dst = v * inv;
        }
        let predicted = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
            .0;
        if predicted == it.label {
            correct += 1;
        }
        let six: [f64; 6] = enc.rot6[i * 6..(i + 1) * 6].try_into().unwrap();
        let r = project_to_so3(&six)?;
        let (lr, g9) = rotation_loss(r.as_array(), &it.relative);
        l_rot += lr;
        rot_err += geodesic_angle(&r.to_quat(), &it.relative.to_quat());
        if alpha != 0.0 {
            let g6 = project_to_so3_backward(&six, &g9)?;
            for k in 0..6 {
                g_rot[i * 6 + k] = alpha * g6[k] * inv;
            }
        }
    }
    if let Some(grads) = grads {
        let rot = if alpha != 0.0 { Some(g_rot.as_slice()) } else { None };
        model.backward(&enc, Some(&g_logits), rot, None, grads)?;
    }
    let (loss_cls, loss_rot) = (l_cls * inv, l_rot * inv);
    Ok(PretrainMetrics {
        loss_cls,
        loss_rot,
        loss: loss_cls + alpha * loss_rot,
        acc: correct as f64 * inv,
        rot_err_rad: rot_err * inv,
    })
}

/// One Adam step on `L_cls + alpha·L_rot`. Metrics describe the model
/// before the update.
pub fn pretrain_step(
    model: &mut EncoderModel,
    optimizer: &mut EncoderOptimizer,
    batch: &PretrainBatch,
    alpha: f64,
) -> Result<PretrainMetrics> {
    if model.is_frozen() {
        return Err(EncoderError::FrozenModel);
    }
    let mut grads = EncoderGrads::zeros(model);
    let metrics = evaluate_batch(model, batch, alpha, Some(&mut grads))?;
    optimizer.step(model, &grads)?;
    Ok(metrics)
}

/// Feature of a frozen model for one (current, goal) pair.
pub fn encode(model: &EncoderModel, current: &PointCloud, goal: &PointCloud) -> Result<Vec<f64>> {
    Ok(encode_many(model, &[(current, goal)])?)
}

/// Features of a frozen model for several pairs, `pairs.len() × 512`.
pub fn encode_many(model: &EncoderModel, pairs: &[(&PointCloud, &PointCloud)]) -> Result<Vec<f64>> {
    if !model.is_frozen() {
        return Err(EncoderError::NotFrozen);
    }
    let enc = model.encode_batch(pairs, false, false)?;
    debug_assert_eq!(enc.features.len(), pairs.len() * FEATURE_DIM);
    Ok(enc.features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub trunk: Vec<usize>,
    pub points: usize,
    pub batch: usize,
    pub steps: usize,
    pub alpha: f64,
    pub lr: f64,
    /// Learning rate reached at the last step by cosine decay.
    pub lr_final: f64,
    pub seed: u64,
    pub log_every: usize,
    pub val_every: usize,
    pub val_batches: usize,
    /// Capacity of the batch prefetch queue; 0 generates inline.
    pub prefetch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            trunk: crate::nn::DEFAULT_TRUNK.to_vec(),
            points: crate::mesh::DEFAULT_CLOUD_POINTS,
            batch: 32,
            steps: 5000,
            alpha: 1.0,
            lr: 1e-3,
            lr_final: 1e-4,
            seed: 0,
            log_every: 50,
            val_every: 500,
            val_batches: 4,
            prefetch: 2,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.trunk.last() != Some(&FEATURE_DIM) {
            return bad("trunk must end in 512");
        }
        if self.points == 0 || self.batch == 0 {
            return bad("points and batch must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.log_every == 0 || self.val_every == 0 || self.val_batches == 0 {
            return bad("log_every, val_every and val_batches must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Every tenth generated batch is held out for validation; the rest train.
fn batch_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn train_batch_index(step: usize) -> u64 {
    (10 * (step / 9) + step % 9) as u64
}

fn val_batch_index(j: usize) -> u64 {
    (10 * j + 9) as u64
}

pub fn validation_batches(
    objects: &[Mesh],
    config: &PretrainConfig,
) -> Result<Vec<PretrainBatch>> {
    (0..config.val_batches)
        .map(|j| {
            let mut rng = batch_rng(config.seed, val_batch_index(j));
            make_pretrain_batch(objects, config.batch, config.points, false, &mut rng)
        })
        .collect()
}

/// Mean metrics over a fixed set of batches.
pub fn validate(
    model: &EncoderModel,
    batches: &[PretrainBatch],
    alpha: f64,
) -> Result<PretrainMetrics> {
    let mut sum = PretrainMetrics {
        loss_cls: 0.0,
        loss_rot: 0.0,
        loss: 0.0,
        acc: 0.0,
        rot_err_rad: 0.0,
    };
    for b in batches {
        let m = evaluate_batch(model, b, alpha, None)?;
        sum.loss_cls += m.loss_cls;
        sum.loss_rot += m.loss_rot;
        sum.acc += m.acc;
        sum.rot_err_rad += m.rot_err_rad;
    }
    let k = batches.len() as f64;
    let (loss_cls, loss_rot) = (sum.loss_cls / k, sum.loss_rot / k);
    Ok(PretrainMetrics {
        loss_cls,
        loss_rot,
        loss: loss_cls + alpha * loss_rot,
        acc: sum.acc / k,
        rot_err_rad: sum.rot_err_rad / k,
    })
}

#[derive(Debug, Serialize)]
struct LogLine<'a> {
    step: usize,
    phase: &'a str,
    #[serde(flatten)]
    metrics: PretrainMetrics,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: EncoderModel,
    pub validation: PretrainMetrics,
    pub checkpoint: Option<PathBuf>,
}

/// Full pretraining run. Writes `encoder.gdx` and `pretrain.jsonl` into
/// `out_dir` when given. The returned model is frozen.
pub fn pretrain(
    objects: &[Mesh],
    config: &PretrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if objects.is_empty() {
        return Err(EncoderError::NoObjects);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(u64::MAX);
    let mut model = EncoderModel::new(&config.trunk, objects.len(), &mut init_rng)?;
    let mut opt = EncoderOptimizer::new(&model, AdamConfig::with_lr(config.lr));
    let val = validation_batches(objects, config)?;

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("pretrain.jsonl"))?))
        }
        None => None,
    };
    let mut write = |step: usize, phase: &str, metrics: PretrainMetrics| -> Result<()> {
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&LogLine {
                step,
                phase,
                metrics,
            })
            .expect("metrics serialize");
            writeln!(w, "{line}")?;
        }
        Ok(())
    };

    let make = |step: usize| {
        let mut rng = batch_rng(config.seed, train_batch_index(step));
        make_pretrain_batch(objects, config.batch, config.points, false, &mut rng)
    };
    std::thread::scope(|scope| -> Result<()> {
        let rx = if config.prefetch > 0 {
            let (tx, rx) = mpsc::sync_channel(config.prefetch);
            let make = &make;
            scope.spawn(move || {
                for step in 0..config.steps {
                    if tx.send(make(step)).is_err() {
                        break;
                    }
                }
            });
            Some(rx)
        } else {
            None
        };
        for step in 0..config.steps {
            let batch = match &rx {
                Some(rx) => rx.recv().expect("producer outlives the loop")?,
                None => make(step)?,
            };
            opt.set_lr(config.lr_at(step));
            let m = pretrain_step(&mut model, &mut opt, &batch, config.alpha)?;
            if step % config.log_every == 0 {
                write(step, "train", m)?;
            }
            if (step + 1) % config.val_every == 0 && step + 1 < config.steps {
                write(step + 1, "val", validate(&model, &val, config.alpha)?)?;
            }
        }
        Ok(())
    })?;

    model.freeze();
    let validation = validate(&model, &val, config.alpha)?;
    write(config.steps, "val", validation)?;
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join("encoder.gdx");
            model.to_checkpoint().save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(PretrainOutcome {
        model,
        validation,
        checkpoint,
    })
}
