//! Goal-conditioned DDPG with target networks, optionally conditioned on
//! frozen encoder features, and the multi-object summed-gradient update.

mod normalizer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Observation, ACTION_DIM, OBS_DIM};
use crate::nn::{
    adam_step, mlp_specs, Activation, AdamConfig, AdamState, Checkpoint, CheckpointEntry, Net,
    NnError, FEATURE_DIM,
};
use crate::replay::Transition;

pub use normalizer::Normalizer;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("mode mismatch: model is {model}, input {input}")]
    ModeMismatch { model: PolicyMode, input: &'static str },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    Vanilla,
    GeometryAware,
}

impl PolicyMode {
    pub fn feature_dim(self) -> usize {
        match self {
            PolicyMode::Vanilla => 0,
            PolicyMode::GeometryAware => FEATURE_DIM,
        }
    }

    pub fn input_dim(self) -> usize {
        OBS_DIM + self.feature_dim()
    }

    fn check_feature(self, present: bool) -> Result<()> {
        match (self, present) {
            (PolicyMode::Vanilla, true) => Err(AgentError::ModeMismatch {
                model: self,
                input: "feature given",
            }),
            (PolicyMode::GeometryAware, false) => Err(AgentError::ModeMismatch {
                model: self,
                input: "feature missing",
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyMode::Vanilla => "vanilla",
            PolicyMode::GeometryAware => "geometry-aware",
        })
    }
}

impl FromStr for PolicyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vanilla" => Ok(PolicyMode::Vanilla),
            "geometry-aware" => Ok(PolicyMode::GeometryAware),
            _ => Err(format!("unknown mode {s:?} (vanilla | geometry-aware)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Target smoothing coefficient.
    pub polyak: f64,
    /// Random-action probability during exploration.
    pub epsilon: f64,
    /// Gaussian action noise scale during exploration.
    pub sigma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Penalty on squared actor outputs.
    pub action_l2: f64,
    /// Transitions per object per update.
    pub batch: usize,
    pub norm_eps: f64,
    pub norm_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            gamma: 0.98,
            polyak: 0.05,
            epsilon: 0.3,
            sigma: 0.2,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            action_l2: 1.0,
            batch: 256,
            norm_eps: 0.01,
            norm_clip: 5.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !(self.sigma >= 0.0) || !(self.action_l2 >= 0.0) {
            return bad("sigma and action_l2 must be non-negative");
        }
        if !(self.lr_actor > 0.0) || !(self.lr_critic > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.norm_eps > 0.0) || !(self.norm_clip > 0.0) {
            return bad("normalizer eps and clip must be positive");
        }
        Ok(())
    }

    /// Lower end of the return range after the reward shift.
    pub fn return_floor(&self) -> f64 {
        -1.0 / (1.0 - self.gamma)
    }
}

/// Actor, critic, their targets and the input normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub mode: PolicyMode,
    pub actor: Net,
    pub critic: Net,
    pub actor_target: Net,
    pub critic_target: Net,
    pub normalizer: Normalizer,
}

impl PolicyModel {
    pub fn new<R: Rng + ?Sized>(mode: PolicyMode, config: &AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = mode.input_dim();
        let mut widths = vec![d];
        widths.extend_from_slice(&config.hidden);
        widths.push(ACTION_DIM);
        let actor = Net::new(mlp_specs(&widths, Activation::Relu, Activation::Tanh), rng);
        widths[0] = d + ACTION_DIM;
        *widths.last_mut().unwrap() = 1;
        let critic = Net::new(mlp_specs(&widths, Activation::Relu, Activation::Identity), rng);
        Ok(Self {
            mode,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            normalizer: Normalizer::new(d, config.norm_eps, config.norm_clip),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mode.input_dim()
    }

    /// Raw (unnormalized) input row for one observation.
    pub fn input_row(&self, obs: &Observation, feature: Option<&[f64]>) -> Result<Vec<f64>> {
        self.mode.check_feature(feature.is_some())?;
        let mut row = obs.flat().to_vec();
        if let Some(f) = feature {
            if f.len() != FEATURE_DIM {
                return Err(NnError::ShapeMismatch {
                    expected: FEATURE_DIM,
                    got: f.len(),
                }
                .into());
            }
            row.extend_from_slice(f);
        }
        Ok(row)
    }

    /// Deterministic action.
    pub fn act(&self, obs: &Observation, feature: Option<&[f64]>) -> Result<[f64; ACTION_DIM]> {
        let row = self.input_row(obs, feature)?;
        let z = self.normalizer.normalize(&row);
        let out = self.actor.predict(&z, 1)?;
        let mut a = [0.0; ACTION_DIM];
        a.copy_from_slice(&out);
        Ok(a)
    }

    /// Actions for `rows.len() / input_dim` raw input rows.
    pub fn act_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let batch = rows.len() / self.input_dim();
        let z = self.normalizer.normalize(rows);
        Ok(self.actor.predict(&z, batch)?)
    }

    pub fn param_hash(&self) -> String {
        crate::nn::hash_params([self.actor.params(), self.critic.params()])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "mode": self.mode }).to_string();
        let mut ck = Checkpoint::new(POLICY_COMPONENT, meta);
        self.push_entries(&mut ck);
        ck
    }

    fn push_entries(&self, ck: &mut Checkpoint) {
        ck.push(CheckpointEntry::net("actor", &self.actor));
        ck.push(CheckpointEntry::net("critic", &self.critic));
        ck.push(CheckpointEntry::net("actor_target", &self.actor_target));
        ck.push(CheckpointEntry::net("critic_target", &self.critic_target));
        ck.push(CheckpointEntry::raw("normalizer", self.normalizer.to_values()));
    }

    fn from_entries(mode: PolicyMode, ck: &Checkpoint) -> Result<Self> {
        let actor = ck.net("actor")?;
        let critic = ck.net("critic")?;
        let actor_target = ck.net("actor_target")?;
        let critic_target = ck.net("critic_target")?;
        let d = mode.input_dim();
        if actor.input_width() != d
            || actor.output_width() != ACTION_DIM
            || critic.input_width() != d + ACTION_DIM
            || critic.output_width() != 1
            || actor_target.layers() != actor.layers()
            || critic_target.layers() != critic.layers()
        {
            return Err(NnError::Checkpoint("policy layer shapes are inconsistent".into()).into());
        }
        let normalizer = Normalizer::from_values(d, ck.raw("normalizer")?)?;
        Ok(Self {
            mode,
            actor,
            critic,
            actor_target,
            critic_target,
            normalizer,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(POLICY_COMPONENT)?;
        let mode = meta_mode(&ck.meta)?;
        Self::from_entries(mode, ck)
    }
}

const POLICY_COMPONENT: &str = "policy";
const AGENT_COMPONENT: &str = "agent";

fn meta_mode(meta: &str) -> Result<PolicyMode> {
    let v: serde_json::Value =
        serde_json::from_str(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    serde_json::from_value(v["mode"].clone())
        .map_err(|e| NnError::Checkpoint(format!("policy mode: {e}")).into())
}

/// With probability `epsilon` a uniform action, otherwise `action` plus
/// Gaussian noise of scale `sigma`, clamped to `[-1, 1]`.
pub fn explore_action<R: Rng + ?Sized>(
    action: &[f64; ACTION_DIM],
    rng: &mut R,
    epsilon: f64,
    sigma: f64,
) -> [f64; ACTION_DIM] {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    }
    if sigma == 0.0 {
        return *action;
    }
    std::array::from_fn(|i| {
        let n: f64 = rng.sample(StandardNormal);
        (action[i] + sigma * n).clamp(-1.0, 1.0)
    })
}

/// `target ← (1 − tau)·target + tau·online`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(NnError::LengthMismatch(target.len(), online.len()).into());
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Row-major training batch for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub object_id: usize,
    pub len: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    /// Rewards in {0, 1}.
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub done: Vec<f64>,
    pub features: Option<Vec<f64>>,
    pub next_features: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_transitions(
        transitions: &[Transition],
        features: Option<Vec<f64>>,
        next_features: Option<Vec<f64>>,
    ) -> Result<Self> {
        let first = transitions.first().ok_or(AgentError::EmptyBatch)?;
        let n = transitions.len();
        let mut b = Batch {
            object_id: first.object_id,
            len: n,
            obs: Vec::with_capacity(n * OBS_DIM),
            actions: Vec::with_capacity(n * ACTION_DIM),
            rewards: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n * OBS_DIM),
            done: Vec::with_capacity(n),
            features,
            next_features,
        };
        for t in transitions {
            b.obs.extend_from_slice(&t.obs.flat());
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs.flat());
            b.done.push(if t.done { 1.0 } else { 0.0 });
        }
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        if self.len == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let shape = |expected: usize, got: usize| -> Result<()> {
            if expected != got {
                return Err(NnError::ShapeMismatch { expected, got }.into());
            }
            Ok(())
        };
        shape(self.len * OBS_DIM, self.obs.len())?;
        shape(self.len * OBS_DIM, self.next_obs.len())?;
        shape(self.len * ACTION_DIM, self.actions.len())?;
        shape(self.len, self.rewards.len())?;
        shape(self.len, self.done.len())?;
        if self.features.is_some() != self.next_features.is_some() {
            return Err(NnError::Checkpoint("features and next features must come together".into()).into());
        }
        if let (Some(f), Some(nf)) = (&self.features, &self.next_features) {
            shape(self.len * FEATURE_DIM, f.len())?;
            shape(self.len * FEATURE_DIM, nf.len())?;
        }
        Ok(())
    }

    fn rows(&self, next: bool) -> Vec<f64> {
        let (obs, feats) = if next {
            (&self.next_obs, &self.next_features)
        } else {
            (&self.obs, &self.features)
        };
        match feats {
            None => obs.clone(),
            Some(f) => {
                let mut out = Vec::with_capacity(self.len * (OBS_DIM + FEATURE_DIM));
                for i in 0..self.len {
                    out.extend_from_slice(&obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
                    out.extend_from_slice(&f[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
                }
                out
            }
        }
    }

    /// Raw input rows for the current observations.
    pub fn input_rows(&self) -> Vec<f64> {
        self.rows(false)
    }
}

/// Loss values and parameter gradients of one batch, before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    /// Gradient of the summed actor and critic losses with respect to the
    /// batch features (`len × 512`); geometry-aware mode only.
    pub features: Option<Vec<f64>>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
    pub mean_q: f64,
}

/// Shifted-reward TD targets clamped to the return range.
pub fn critic_targets(model: &PolicyModel, batch: &Batch, config: &AgentConfig) -> Result<Vec<f64>> {
    let n = batch.len;
    let z_next = model.normalizer.normalize(&batch.rows(true));
    let a_next = model.actor_target.predict(&z_next, n)?;
    let q_next = model
        .critic_target
        .predict(&concat_rows(&z_next, model.input_dim(), &a_next, ACTION_DIM), n)?;
    let floor = config.return_floor();
    Ok((0..n)
        .map(|i| {
            let y = (batch.rewards[i] - 1.0) + config.gamma * (1.0 - batch.done[i]) * q_next[i];
            y.clamp(floor, 0.0)
        })
        .collect())
}

/// Gradients of the critic regression and actor losses on one batch with
/// the current normalizer.
pub fn gradients(model: &PolicyModel, batch: &Batch, config: &AgentConfig) -> Result<Gradients> {
    batch.check()?;
    model.mode.check_feature(batch.features.is_some())?;
    let n = batch.len;
    let d = model.input_dim();
    let x = batch.rows(false);
    let z = model.normalizer.normalize(&x);
    let y = critic_targets(model, batch, config)?;

    let mut critic_grad = vec![0.0; model.critic.param_count()];
    let acts = model
        .critic
        .forward(&concat_rows(&z, d, &batch.actions, ACTION_DIM), n)?;
    let q = acts.output();
    let mut critic_loss = 0.0;
    let mut dq = vec![0.0; n];
    for i in 0..n {
        let e = q[i] - y[i];
        critic_loss += e * e;
        dq[i] = 2.0 * e / n as f64;
    }
    critic_loss /= n as f64;
    let dz_critic = model.critic.backward(&acts, &dq, &mut critic_grad)?;

    let mut actor_grad = vec![0.0; model.actor.param_count()];
    let actor_acts = model.actor.forward(&z, n)?;
    let pi = actor_acts.output();
    let q_acts = model.critic.forward(&concat_rows(&z, d, pi, ACTION_DIM), n)?;
    let q_pi = q_acts.output();
    let mean_q = q_pi.iter().sum::<f64>() / n as f64;
    let l2_scale = config.action_l2 / (n * ACTION_DIM) as f64;
    let actor_loss = -mean_q + l2_scale * pi.iter().map(|a| a * a).sum::<f64>();
    let mut scratch = vec![0.0; model.critic.param_count()];
    let dinput = model
        .critic
        .backward(&q_acts, &vec![-1.0 / n as f64; n], &mut scratch)?;
    let w = d + ACTION_DIM;
    let mut dpi = vec![0.0; n * ACTION_DIM];
    for i in 0..n {
        for k in 0..ACTION_DIM {
            dpi[i * ACTION_DIM + k] = dinput[i * w + d + k] + 2.0 * l2_scale * pi[i * ACTION_DIM + k];
        }
    }
    let dz_actor = model.actor.backward(&actor_acts, &dpi, &mut actor_grad)?;

    let features = if model.mode == PolicyMode::GeometryAware {
        let mut dz = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                dz[i * d + j] = dz_critic[i * w + j] + dinput[i * w + j] + dz_actor[i * d + j];
            }
        }
        let dx = model.normalizer.backward(&x, &dz);
        let mut df = Vec::with_capacity(n * FEATURE_DIM);
        for i in 0..n {
            df.extend_from_slice(&dx[i * d + OBS_DIM..(i + 1) * d]);
        }
        Some(df)
    } else {
        None
    };

    Ok(Gradients {
        actor: actor_grad,
        critic: critic_grad,
        features,
        critic_loss,
        actor_loss,
        mean_q,
    })
}

fn concat_rows(a: &[f64], wa: usize, b: &[f64], wb: usize) -> Vec<f64> {
    let n = a.len() / wa;
    debug_assert_eq!(b.len(), n * wb);
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a[i * wa..(i + 1) * wa]);
        out.extend_from_slice(&b[i * wb..(i + 1) * wb]);
    }
    out
}

/// Result of one learner update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// Losses summed over object batches.
    pub losses: Losses,
    /// Summed gradients that were applied.
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
    /// Feature gradients per batch, in the order of the sorted batches.
    pub feature_grads: Vec<(usize, Vec<f64>)>,
}

/// Policy model together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub model: PolicyModel,
    pub config: AgentConfig,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(mode: PolicyMode, config: AgentConfig, rng: &mut R) -> Result<Self> {
        let model = PolicyModel::new(mode, &config, rng)?;
        Ok(Self::from_model(model, config))
    }

    pub fn from_model(model: PolicyModel, config: AgentConfig) -> Self {
        let actor_opt = AdamState::new(model.actor.param_count(), AdamConfig::with_lr(config.lr_actor));
        let critic_opt = AdamState::new(model.critic.param_count(), AdamConfig::with_lr(config.lr_critic));
        Self {
            model,
            config,
            actor_opt,
            critic_opt,
        }
    }

    pub fn mode(&self) -> PolicyMode {
        self.model.mode
    }

    /// One update on a single batch; targets are left alone.
    pub fn ddpg_update(&mut self, batch: &Batch) -> Result<UpdateReport> {
        self.multi_task_update(std::slice::from_ref(batch))
    }

    /// Normalizer statistics are updated from every batch, then per-batch
    /// gradients are summed in ascending object-id order and applied with
    /// one Adam step each for actor and critic.
    pub fn multi_task_update(&mut self, batches: &[Batch]) -> Result<UpdateReport> {
        if batches.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let mut order: Vec<&Batch> = batches.iter().collect();
        order.sort_by_key(|b| b.object_id);
        for b in &order {
            b.check()?;
            self.model.mode.check_feature(b.features.is_some())?;
        }
        for b in &order {
            self.model.normalizer.update(&b.input_rows());
        }
        let mut actor_grad = vec![0.0; self.model.actor.param_count()];
        let mut critic_grad = vec![0.0; self.model.critic.param_count()];
        let mut losses = Losses::default();
        let mut feature_grads = Vec::new();
        for b in &order {
            let g = gradients(&self.model, b, &self.config)?;
            for (s, v) in actor_grad.iter_mut().zip(&g.actor) {
                *s += v;
            }
            for (s, v) in critic_grad.iter_mut().zip(&g.critic) {
                *s += v;
            }
            losses.critic += g.critic_loss;
            losses.actor += g.actor_loss;
            losses.mean_q += g.mean_q;
            if let Some(f) = g.features {
                feature_grads.push((b.object_id, f));
            }
        }
        adam_step(self.model.actor.params_mut(), &actor_grad, &mut self.actor_opt)?;
        adam_step(self.model.critic.params_mut(), &critic_grad, &mut self.critic_opt)?;
        Ok(UpdateReport {
            losses,
            actor_grad,
            critic_grad,
            feature_grads,
        })
    }

    /// Moves both target networks towards the online networks.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.config.polyak;
        let m = &mut self.model;
        soft_update(m.actor_target.params_mut(), m.actor.params(), tau)?;
        soft_update(m.critic_target.params_mut(), m.critic.params(), tau)?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "mode": self.model.mode,
            "config": self.config,
            "actor_adam": self.actor_opt.config,
            "critic_adam": self.critic_opt.config,
        })
        .to_string();
        let mut ck = Checkpoint::new(AGENT_COMPONENT, meta);
        self.model.push_entries(&mut ck);
        for (name, st) in [("actor_adam", &self.actor_opt), ("critic_adam", &self.critic_opt)] {
            ck.push(CheckpointEntry::raw(format!("{name}_m"), st.m.clone()));
            ck.push(CheckpointEntry::raw(format!("{name}_v"), st.v.clone()));
            ck.push(CheckpointEntry::raw(format!("{name}_step"), vec![st.step as f64]));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(AGENT_COMPONENT)?;
        let meta: serde_json::Value =
            serde_json::from_str(&ck.meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let parse = |k: &str| meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let mode = meta_mode(&ck.meta)?;
        let config: AgentConfig = serde_json::from_value(parse("config"))
            .map_err(|e| NnError::Checkpoint(format!("agent config: {e}")))?;
        let model = PolicyModel::from_entries(mode, ck)?;
        let opt = |name: &str, len: usize| -> Result<AdamState> {
            let config: AdamConfig = serde_json::from_value(parse(name))
                .map_err(|e| NnError::Checkpoint(format!("{name}: {e}")))?;
            let m = ck.raw(&format!("{name}_m"))?.to_vec();
            let v = ck.raw(&format!("{name}_v"))?.to_vec();
            let step = ck.raw(&format!("{name}_step"))?;
            if m.len() != len || v.len() != len || step.len() != 1 {
                return Err(NnError::Checkpoint(format!("{name} has the wrong size")).into());
            }
            Ok(AdamState {
                config,
                m,
                v,
                step: step[0] as u64,
            })
        };
        let actor_opt = opt("actor_adam", model.actor.param_count())?;
        let critic_opt = opt("critic_adam", model.critic.param_count())?;
        Ok(Self {
            model,
            config,
            actor_opt,
            critic_opt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
