use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::rollout::{encode_observations, evaluate, object_features, run_episodes, Explore};
use super::{purpose, select_objects, stream_rng, HarnessError, Result, RolloutStats, RunConfig};
use crate::agent::{Agent, Batch, Losses, PolicyMode};
use crate::encoder::EncoderOptimizer;
use crate::env::{RigidObject, TorqueMap};
use crate::nn::{AdamConfig, AdamState, Checkpoint, CheckpointEntry, EncoderGrads, EncoderModel, NnError};
use crate::replay::{EpisodeBuffer, Transition};

/// Runtime knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Rollout threads; 0 or 1 runs inline.
    pub workers: usize,
    /// Continue from the run directory's last checkpoint.
    pub resume: bool,
    /// Stop (after checkpointing) once this many epochs are done.
    pub stop_after: Option<usize>,
    /// Print one progress line per epoch to stderr.
    pub progress: bool,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub epoch: usize,
    pub object: String,
    /// `train`, `eval-train` or `eval-heldout`.
    pub phase: String,
    pub success: f64,
    /// Training environment steps so far, over all objects.
    pub samples: u64,
    pub losses: Option<Losses>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config_hash: String,
    pub lines: Vec<MetricLine>,
    pub samples: u64,
    pub wall_clock_s: f64,
    /// Last evaluation on the training objects.
    pub final_train: Vec<RolloutStats>,
    pub final_heldout: Vec<RolloutStats>,
    pub agent: Agent,
    pub encoder: Option<EncoderModel>,
}

impl RunResult {
    pub fn mean_train_success(&self) -> f64 {
        mean(self.final_train.iter().map(|s| s.success))
    }

    pub fn mean_heldout_success(&self) -> f64 {
        mean(self.final_heldout.iter().map(|s| s.success))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Objects and encoder a run works with, already loaded.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub objects: Vec<Arc<RigidObject>>,
    pub heldout: Vec<Arc<RigidObject>>,
    pub encoder: Option<EncoderModel>,
}

impl TrainingSet {
    /// Loads what `config` refers to.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let objects = select_objects(&config.objects, &config.train_objects, 0)?;
        let heldout = match &config.heldout {
            Some(p) => select_objects(p, &config.heldout_objects, objects.len())?,
            None => Vec::new(),
        };
        let encoder = match &config.encoder {
            Some(p) => Some(EncoderModel::from_checkpoint(&Checkpoint::load(p)?)?),
            None => None,
        };
        Ok(Self {
            objects,
            heldout,
            encoder,
        })
    }
}

/// Single-object oracle run.
pub fn train_single(config: &RunConfig, out_dir: Option<&Path>, options: &TrainOptions) -> Result<RunResult> {
    let set = TrainingSet::load(config)?;
    if set.objects.len() != 1 {
        return Err(HarnessError::Config(format!(
            "single-object training needs exactly one object, got {}",
            set.objects.len()
        )));
    }
    train(config, set, out_dir, options)
}

/// Joint run over every training object.
pub fn train_multi(config: &RunConfig, out_dir: Option<&Path>, options: &TrainOptions) -> Result<RunResult> {
    let set = TrainingSet::load(config)?;
    train(config, set, out_dir, options)
}

struct RunState {
    agent: Agent,
    buffer: EpisodeBuffer,
    encoder: Option<EncoderModel>,
    encoder_opt: Option<EncoderOptimizer>,
    epoch: usize,
    samples: u64,
}

const STATE_FILE: &str = "state.gdx";
const RUN_COMPONENT: &str = "run";

/// The training loop. Each epoch runs `cycles` cycles of: rollouts on every
/// object, episode inserts, `updates_per_epoch / cycles` summed-gradient
/// updates on per-object relabeled batches, one target update. Evaluation
/// follows every `eval_every` epochs and the last one.
pub fn train(
    config: &RunConfig,
    set: TrainingSet,
    out_dir: Option<&Path>,
    options: &TrainOptions,
) -> Result<RunResult> {
    config.validate()?;
    if set.objects.is_empty() {
        return Err(HarnessError::TooFewObjects { needed: 1, got: 0 });
    }
    if set.encoder.is_some() != (config.mode == PolicyMode::GeometryAware) {
        return Err(HarnessError::Config("an encoder is needed exactly in geometry-aware mode".into()));
    }
    let started = Instant::now();
    let hash = config.hash();
    let map = Arc::new(TorqueMap::seeded(config.env.map_seed, config.env.tau_max));
    let objects = &set.objects;

    let mut state = fresh_state(config, &set)?;
    let mut lines = Vec::new();
    let mut metrics: Option<BufWriter<File>> = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        let state_path = dir.join("checkpoints").join(STATE_FILE);
        if options.resume && state_path.exists() {
            state = load_state(&state_path, &hash, &state)?;
            lines = super::report::read_metrics(&dir.join("metrics.jsonl"))?
                .into_iter()
                .filter(|l| l.epoch <= state.epoch)
                .collect();
        }
        config.save(&dir.join("config.json"))?;
        let mut w = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(dir.join("metrics.jsonl"))?,
        );
        for l in &lines {
            write_line(&mut w, l)?;
        }
        w.flush()?;
        metrics = Some(w);
    }

    let per_cycle = config.rollouts_per_epoch / config.cycles;
    let updates_per_cycle = config.updates_per_epoch / config.cycles;
    let explore = Explore {
        epsilon: config.agent.epsilon,
        sigma: config.agent.sigma,
    };
    let ids: Vec<usize> = objects.iter().map(|o| o.id).collect();
    let mut final_train = Vec::new();
    let mut final_heldout = Vec::new();

    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let mut successes = vec![0.0; objects.len()];
        let mut loss_sum = Losses::default();
        let mut n_updates = 0usize;
        for cycle in 0..config.cycles {
            let runs = collect(
                config,
                &state,
                objects,
                &map,
                per_cycle,
                epoch,
                cycle,
                explore,
                options.workers,
            )?;
            for (k, run) in runs.into_iter().enumerate() {
                successes[k] += run.final_rewards.iter().sum::<f64>();
                for ep in run.episodes {
                    state.samples += ep.len() as u64;
                    state.buffer.insert(ep)?;
                }
            }
            for u in 0..updates_per_cycle {
                let update_index = (cycle * updates_per_cycle + u) as u64;
                let losses = update(config, &mut state, objects, &ids, epoch as u64, update_index)?;
                loss_sum.critic += losses.critic;
                loss_sum.actor += losses.actor;
                loss_sum.mean_q += losses.mean_q;
                n_updates += 1;
            }
            state.agent.update_targets()?;
        }
        state.epoch += 1;
        let epoch_no = state.epoch;
        let losses = (n_updates > 0).then(|| Losses {
            critic: loss_sum.critic / n_updates as f64,
            actor: loss_sum.actor / n_updates as f64,
            mean_q: loss_sum.mean_q / n_updates as f64,
        });
        let mut new_lines = Vec::new();
        for (k, obj) in objects.iter().enumerate() {
            new_lines.push(MetricLine {
                epoch: epoch_no,
                object: obj.name.clone(),
                phase: "train".into(),
                success: successes[k] / config.rollouts_per_epoch as f64,
                samples: state.samples,
                losses,
            });
        }
        let last = epoch_no == config.epochs || options.stop_after == Some(epoch_no);
        if epoch_no % config.eval_every == 0 || last {
            let enc = state.encoder.as_ref();
            final_train = evaluate(
                &state.agent.model,
                enc,
                objects,
                &config.env,
                &map,
                config.eval_episodes,
                config.seed,
                epoch_no as u64,
            )?;
            final_heldout = evaluate(
                &state.agent.model,
                enc,
                &set.heldout,
                &config.env,
                &map,
                config.eval_episodes,
                config.seed,
                epoch_no as u64,
            )?;
            for (phase, stats) in [("eval-train", &final_train), ("eval-heldout", &final_heldout)] {
                for s in stats.iter() {
                    new_lines.push(MetricLine {
                        epoch: epoch_no,
                        object: s.object.clone(),
                        phase: phase.into(),
                        success: s.success,
                        samples: state.samples,
                        losses: None,
                    });
                }
            }
        }
        if let Some(w) = metrics.as_mut() {
            for l in &new_lines {
                write_line(w, l)?;
            }
            w.flush()?;
        }
        if options.progress {
            let train_mean = mean(new_lines.iter().filter(|l| l.phase == "train").map(|l| l.success));
            let eval_mean = mean(new_lines.iter().filter(|l| l.phase == "eval-train").map(|l| l.success));
            eprintln!(
                "epoch {epoch_no:>3}  samples {:>8}  train {train_mean:.3}  eval {eval_mean:.3}  critic {:.4}",
                state.samples,
                losses.map_or(f64::NAN, |l| l.critic)
            );
        }
        lines.extend(new_lines);
        if let Some(dir) = out_dir {
            if epoch_no % config.checkpoint_every == 0 || last {
                save_state(&dir.join("checkpoints").join(STATE_FILE), &hash, &state)?;
            }
        }
        if options.stop_after == Some(epoch_no) {
            break;
        }
    }

    if state.epoch == config.epochs && final_train.is_empty() {
        // resumed after the last epoch: evaluation lines are already on disk
        let enc = state.encoder.as_ref();
        final_train = evaluate(&state.agent.model, enc, objects, &config.env, &map, config.eval_episodes, config.seed, state.epoch as u64)?;
        final_heldout = evaluate(&state.agent.model, enc, &set.heldout, &config.env, &map, config.eval_episodes, config.seed, state.epoch as u64)?;
    }

    let result = RunResult {
        config_hash: hash,
        lines,
        samples: state.samples,
        wall_clock_s: started.elapsed().as_secs_f64(),
        final_train,
        final_heldout,
        agent: state.agent,
        encoder: state.encoder,
    };
    if let Some(dir) = out_dir {
        result.agent.save(&dir.join("checkpoints").join("agent.gdx"))?;
        if let (true, Some(enc)) = (config.finetune_encoder, &result.encoder) {
            enc.to_checkpoint().save(&dir.join("checkpoints").join("encoder.gdx"))?;
        }
        write_summary(dir, &result)?;
        super::report::write_report(dir, &dir.join("report.csv"))?;
    }
    Ok(result)
}

fn write_line(w: &mut impl Write, l: &MetricLine) -> Result<()> {
    serde_json::to_writer(&mut *w, l)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_summary(dir: &Path, r: &RunResult) -> Result<()> {
    let table = |s: &[RolloutStats]| -> serde_json::Map<String, serde_json::Value> {
        s.iter().map(|s| (s.object.clone(), s.success.into())).collect()
    };
    let v = serde_json::json!({
        "config_hash": r.config_hash,
        "samples": r.samples,
        "wall_clock_s": r.wall_clock_s,
        "final_train": table(&r.final_train),
        "final_heldout": table(&r.final_heldout),
        "agent_hash": r.agent.model.param_hash(),
        "encoder_hash": r.encoder.as_ref().map(|e| e.param_hash()),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

fn fresh_state(config: &RunConfig, set: &TrainingSet) -> Result<RunState> {
    let mut init = stream_rng(config.seed, purpose::INIT, &[]);
    let agent = Agent::new(config.mode, config.agent.clone(), &mut init)?;
    let mut encoder = set.encoder.clone();
    let mut encoder_opt = None;
    if let Some(enc) = encoder.as_mut() {
        if config.finetune_encoder {
            enc.unfreeze();
            encoder_opt = Some(EncoderOptimizer::new(enc, AdamConfig::with_lr(config.lr_encoder)));
        } else {
            enc.freeze();
        }
    }
    Ok(RunState {
        agent,
        buffer: EpisodeBuffer::new(config.replay.capacity),
        encoder,
        encoder_opt,
        epoch: 0,
        samples: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn collect(
    config: &RunConfig,
    state: &RunState,
    objects: &[Arc<RigidObject>],
    map: &Arc<TorqueMap>,
    per_cycle: usize,
    epoch: usize,
    cycle: usize,
    explore: Explore,
    workers: usize,
) -> Result<Vec<super::rollout::EpisodeRun>> {
    let one = |obj: &Arc<RigidObject>| {
        let idx = |k: u64| [epoch as u64, cycle as u64, obj.id as u64, k];
        let rngs = (0..per_cycle)
            .map(|k| stream_rng(config.seed, purpose::ROLLOUT, &idx(k as u64)))
            .collect();
        let policy_rng = stream_rng(config.seed, purpose::ROLLOUT, &idx(u64::MAX));
        run_episodes(
            &state.agent.model,
            state.encoder.as_ref(),
            obj,
            &config.env,
            map,
            rngs,
            policy_rng,
            Some(explore),
            true,
        )
    };
    if workers <= 1 || objects.len() == 1 {
        return objects.iter().map(one).collect();
    }
    let chunk = objects.len().div_ceil(workers);
    let results: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
        let handles: Vec<_> = objects
            .chunks(chunk)
            .map(|group| s.spawn(move || group.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(objects.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn update(
    config: &RunConfig,
    state: &mut RunState,
    objects: &[Arc<RigidObject>],
    ids: &[usize],
    epoch: u64,
    update_index: u64,
) -> Result<Losses> {
    let points = config.env.cloud_points;
    let finetune = state.encoder_opt.is_some();
    let mut batches = Vec::with_capacity(ids.len());
    let mut encodings = Vec::new();
    for (obj, &id) in objects.iter().zip(ids) {
        let mut rng = stream_rng(config.seed, purpose::SAMPLE, &[epoch, update_index, id as u64]);
        let trans: Vec<Transition> =
            state
                .buffer
                .her_sample_object(id, config.agent.batch, config.replay.relabel_k, &mut rng)?;
        let (features, next_features) = match state.encoder.as_ref() {
            Some(enc) => {
                let obs: Vec<_> = trans.iter().map(|t| &t.obs).collect();
                let next: Vec<_> = trans.iter().map(|t| &t.next_obs).collect();
                let f = if finetune {
                    let e = encode_observations(enc, obj, &obs, points, true)?;
                    let f = e.features.clone();
                    encodings.push(e);
                    f
                } else {
                    object_features(enc, obj, &obs, points)?
                };
                (Some(f), Some(object_features(enc, obj, &next, points)?))
            }
            None => (None, None),
        };
        batches.push(Batch::from_transitions(&trans, features, next_features)?);
    }
    let report = state.agent.multi_task_update(&batches)?;
    if let (Some(enc), Some(opt)) = (state.encoder.as_mut(), state.encoder_opt.as_mut()) {
        // batches were built in ascending id order, matching the report
        let mut grads = EncoderGrads::zeros(enc);
        for (e, (_, g)) in encodings.iter().zip(&report.feature_grads) {
            enc.backward(e, None, None, Some(g), &mut grads)?;
        }
        opt.step(enc, &grads)?;
    }
    Ok(report.losses)
}

fn nest(into: &mut Checkpoint, prefix: &str, child: Checkpoint) -> serde_json::Value {
    for mut e in child.entries {
        e.name = format!("{prefix}/{}", e.name);
        into.push(e);
    }
    serde_json::json!({ "component": child.component, "meta": child.meta })
}

fn extract(from: &Checkpoint, prefix: &str, info: &serde_json::Value) -> Result<Checkpoint> {
    let field = |k: &str| {
        info.get(k)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Resume(format!("{prefix}: missing {k}")))
    };
    let mut ck = Checkpoint::new(field("component")?, field("meta")?);
    let p = format!("{prefix}/");
    for e in &from.entries {
        if let Some(name) = e.name.strip_prefix(&p) {
            let mut e = e.clone();
            e.name = name.to_string();
            ck.push(e);
        }
    }
    Ok(ck)
}

fn save_state(path: &Path, hash: &str, state: &RunState) -> Result<()> {
    let mut ck = Checkpoint::new(RUN_COMPONENT, String::new());
    let agent = nest(&mut ck, "agent", state.agent.to_checkpoint());
    let replay = nest(&mut ck, "replay", state.buffer.to_checkpoint());
    let encoder = state
        .encoder
        .as_ref()
        .map(|e| nest(&mut ck, "encoder", e.to_checkpoint()));
    let mut opt_meta = Vec::new();
    if let Some(opt) = &state.encoder_opt {
        for (i, s) in opt.states().iter().enumerate() {
            ck.push(CheckpointEntry::raw(format!("encoder_opt/{i}_m"), s.m.clone()));
            ck.push(CheckpointEntry::raw(format!("encoder_opt/{i}_v"), s.v.clone()));
            opt_meta.push(serde_json::json!({ "config": s.config, "step": s.step }));
        }
    }
    ck.meta = serde_json::json!({
        "config_hash": hash,
        "epoch": state.epoch,
        "samples": state.samples,
        "agent": agent,
        "replay": replay,
        "encoder": encoder,
        "encoder_opt": opt_meta,
    })
    .to_string();
    ck.save(path)?;
    Ok(())
}

fn load_state(path: &Path, hash: &str, fresh: &RunState) -> Result<RunState> {
    let ck = Checkpoint::load(path)?;
    ck.expect_component(RUN_COMPONENT)?;
    let meta: serde_json::Value = serde_json::from_str(&ck.meta)?;
    if meta["config_hash"].as_str() != Some(hash) {
        return Err(HarnessError::Resume("checkpoint belongs to a different config".into()));
    }
    let num = |k: &str| {
        meta[k]
            .as_u64()
            .ok_or_else(|| HarnessError::Resume(format!("missing {k}")))
    };
    let agent = Agent::from_checkpoint(&extract(&ck, "agent", &meta["agent"])?)?;
    let buffer = EpisodeBuffer::from_checkpoint(&extract(&ck, "replay", &meta["replay"])?)?;
    let encoder = if meta["encoder"].is_null() {
        None
    } else {
        Some(EncoderModel::from_checkpoint(&extract(&ck, "encoder", &meta["encoder"])?)?)
    };
    if encoder.is_some() != fresh.encoder.is_some() {
        return Err(HarnessError::Resume("encoder presence differs from the config".into()));
    }
    let encoder_opt = match (&fresh.encoder_opt, meta["encoder_opt"].as_array()) {
        (None, _) => None,
        (Some(_), Some(items)) if items.len() == 3 => {
            let mut states = Vec::with_capacity(3);
            for (i, item) in items.iter().enumerate() {
                let config: AdamConfig = serde_json::from_value(item["config"].clone())?;
                let step = item["step"]
                    .as_u64()
                    .ok_or_else(|| HarnessError::Resume("optimizer step".into()))?;
                states.push(AdamState {
                    config,
                    m: ck.raw(&format!("encoder_opt/{i}_m"))?.to_vec(),
                    v: ck.raw(&format!("encoder_opt/{i}_v"))?.to_vec(),
                    step,
                });
            }
            let states: [AdamState; 3] = states
                .try_into()
                .map_err(|_| NnError::Checkpoint("encoder optimizer".into()))?;
            Some(EncoderOptimizer::from_states(states))
        }
        _ => return Err(HarnessError::Resume("missing encoder optimizer state".into())),
    };
    Ok(RunState {
        agent,
        buffer,
        encoder,
        encoder_opt,
        epoch: num("epoch")? as usize,
        samples: num("samples")?,
    })
}

/// Directory of a run inside a parent, used by sweeps.
pub(crate) fn child_dir(parent: Option<&Path>, name: &str) -> Option<PathBuf> {
    parent.map(|p| p.join(name))
}
