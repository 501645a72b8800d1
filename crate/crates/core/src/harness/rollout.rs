use std::sync::Arc;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::{purpose, stream_rng, HarnessError, Result};
use crate::agent::{explore_action, AgentError, PolicyModel};
use crate::env::{cloud_pair, EnvConfig, Env, Observation, RigidObject, TorqueMap, ACTION_DIM};
use crate::mesh::PointCloud;
use crate::nn::{BatchEncoding, EncoderModel, FEATURE_DIM};
use crate::replay::Transition;

/// Anything that maps a batch of observations to actions.
pub trait Policy: Sync {
    fn needs_features(&self) -> bool;

    /// One action per observation. `features` is `obs.len() × 512` when
    /// [`Policy::needs_features`] holds.
    fn act_batch(
        &self,
        obs: &[Observation],
        features: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<[f64; ACTION_DIM]>>;
}

impl Policy for PolicyModel {
    fn needs_features(&self) -> bool {
        self.mode.feature_dim() > 0
    }

    fn act_batch(
        &self,
        obs: &[Observation],
        features: Option<&[f64]>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<[f64; ACTION_DIM]>> {
        let mut rows = Vec::with_capacity(obs.len() * self.input_dim());
        for (i, o) in obs.iter().enumerate() {
            let f = features.map(|f| &f[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
            rows.extend(self.input_row(o, f)?);
        }
        let out = self.act_rows(&rows)?;
        Ok(out
            .chunks_exact(ACTION_DIM)
            .map(|c| {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(c);
                a
            })
            .collect())
    }
}

/// Always outputs the zero action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn needs_features(&self) -> bool {
        false
    }

    fn act_batch(
        &self,
        obs: &[Observation],
        _: Option<&[f64]>,
        _: &mut ChaCha8Rng,
    ) -> Result<Vec<[f64; ACTION_DIM]>> {
        Ok(vec![[0.0; ACTION_DIM]; obs.len()])
    }
}

/// Uniform random actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn needs_features(&self) -> bool {
        false
    }

    fn act_batch(
        &self,
        obs: &[Observation],
        _: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<[f64; ACTION_DIM]>> {
        Ok(obs
            .iter()
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
            .collect())
    }
}

/// Current and goal clouds behind each observation. Clouds are taken from
/// the observation when present, otherwise regenerated from its cloud seed
/// at the observation's current and goal orientations.
pub fn observation_clouds(
    object: &RigidObject,
    obs: &[&Observation],
    points: usize,
) -> Vec<(PointCloud, PointCloud)> {
    obs.iter()
        .map(|o| match &o.clouds {
            Some(c) => (c.current.clone(), c.goal.clone()),
            None => {
                let c = cloud_pair(object, o.cloud_seed, points, &o.achieved, &o.goal);
                (c.current, c.goal)
            }
        })
        .collect()
}

/// Encodes the clouds behind `obs`; `keep_cache` retains what the
/// encoder's backward pass needs.
pub fn encode_observations(
    encoder: &EncoderModel,
    object: &RigidObject,
    obs: &[&Observation],
    points: usize,
    keep_cache: bool,
) -> Result<BatchEncoding> {
    let clouds = observation_clouds(object, obs, points);
    let pairs: Vec<(&PointCloud, &PointCloud)> = clouds.iter().map(|(c, g)| (c, g)).collect();
    Ok(encoder.encode_batch(&pairs, false, keep_cache)?)
}

/// Encoder features for observations of `object`, `obs.len() × 512`.
pub fn object_features(
    encoder: &EncoderModel,
    object: &RigidObject,
    obs: &[&Observation],
    points: usize,
) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(encode_observations(encoder, object, obs, points, false)?.features)
}

/// Exploration settings for training rollouts.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Explore {
    pub epsilon: f64,
    pub sigma: f64,
}

/// Episodes run in lockstep on one object, one generator per episode.
pub(crate) struct EpisodeRun {
    pub episodes: Vec<Vec<Transition>>,
    /// Reward of the final step of each episode.
    pub final_rewards: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_episodes(
    policy: &dyn Policy,
    encoder: Option<&EncoderModel>,
    object: &Arc<RigidObject>,
    env_config: &EnvConfig,
    map: &Arc<TorqueMap>,
    mut rngs: Vec<ChaCha8Rng>,
    mut policy_rng: ChaCha8Rng,
    explore: Option<Explore>,
    record: bool,
) -> Result<EpisodeRun> {
    if policy.needs_features() != encoder.is_some() {
        return Err(HarnessError::Agent(AgentError::ModeMismatch {
            model: if policy.needs_features() {
                crate::agent::PolicyMode::GeometryAware
            } else {
                crate::agent::PolicyMode::Vanilla
            },
            input: if encoder.is_some() {
                "encoder given"
            } else {
                "encoder missing"
            },
        }));
    }
    let mut config = env_config.clone();
    config.include_cloud = encoder.is_some();
    let n = rngs.len();
    let mut envs = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for rng in rngs.iter_mut() {
        let mut env = Env::new(config.clone(), object.clone(), map.clone())?;
        obs.push(env.reset(rng));
        envs.push(env);
    }
    let mut episodes: Vec<Vec<Transition>> = vec![Vec::with_capacity(config.episode_len); n];
    let mut final_rewards = vec![0.0; n];
    for _ in 0..config.episode_len {
        let features = match encoder {
            Some(enc) => {
                let refs: Vec<&Observation> = obs.iter().collect();
                Some(object_features(enc, object, &refs, config.cloud_points)?)
            }
            None => None,
        };
        let actions = policy.act_batch(&obs, features.as_deref(), &mut policy_rng)?;
        for i in 0..n {
            let a = match explore {
                Some(e) => explore_action(&actions[i], &mut rngs[i], e.epsilon, e.sigma),
                None => actions[i],
            };
            let out = envs[i].step(&a, &mut rngs[i])?;
            final_rewards[i] = out.reward;
            let next = out.observation;
            if record {
                let mut o = obs[i].clone();
                o.clouds = None;
                let mut nx = next.clone();
                nx.clouds = None;
                episodes[i].push(Transition {
                    object_id: object.id,
                    t: envs[i].state().step - 1,
                    achieved: nx.achieved,
                    goal: nx.goal,
                    obs: o,
                    action: a,
                    reward: out.reward,
                    next_obs: nx,
                    done: out.done,
                    relabeled: false,
                });
            }
            obs[i] = next;
        }
    }
    Ok(EpisodeRun {
        episodes,
        final_rewards,
    })
}

/// Success rates from evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub object: String,
    pub success: f64,
}

/// Mean final-step reward over `episodes` noise-free episodes per object.
/// Episode `k` of object `i` uses its own stream derived from
/// `(seed, tag, i, k)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &dyn Policy,
    encoder: Option<&EncoderModel>,
    objects: &[Arc<RigidObject>],
    env_config: &EnvConfig,
    map: &Arc<TorqueMap>,
    episodes: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<RolloutStats>> {
    objects
        .iter()
        .map(|obj| {
            let rngs = (0..episodes)
                .map(|k| stream_rng(seed, purpose::EVAL, &[tag, obj.id as u64, k as u64]))
                .collect();
            let policy_rng = stream_rng(seed, purpose::EVAL, &[tag, obj.id as u64, u64::MAX]);
            let run =
                run_episodes(policy, encoder, obj, env_config, map, rngs, policy_rng, None, false)?;
            Ok(RolloutStats {
                object: obj.name.clone(),
                success: run.final_rewards.iter().sum::<f64>() / episodes.max(1) as f64,
            })
        })
        .collect()
}
