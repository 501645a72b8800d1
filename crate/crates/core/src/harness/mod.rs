//! Training orchestration, evaluation, object splits, scaling sweeps and
//! metric reports.

mod report;
mod rollout;
mod split;
mod sweep;
mod train;


use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, PolicyMode};
use crate::encoder::EncoderError;
use crate::env::{EnvConfig, EnvError, ObjectRegistry, RigidObject};
use crate::nn::NnError;
use crate::replay::{ReplayConfig, ReplayError};

pub use report::{read_metrics, report, write_report, REPORT_HEADER};
pub use rollout::{
    encode_observations, evaluate, object_features, observation_clouds, Policy, RandomPolicy,
    RolloutStats, ZeroPolicy,
};
pub use split::{difficulty_scores, split_by_scores, split_objects, Split, DEFAULT_TEST_RATIO};
pub use sweep::{scaling_sweep, SweepRow};
pub use train::{train, train_multi, train_single, MetricLine, RunResult, TrainOptions, TrainingSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("need at least {needed} objects, got {got}")]
    TooFewObjects { needed: usize, got: usize },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: PolicyMode,
    /// Object registry for training.
    pub objects: PathBuf,
    /// Names to train on, in order; empty means the whole registry.
    pub train_objects: Vec<String>,
    /// Registry of held-out objects evaluated zero-shot.
    pub heldout: Option<PathBuf>,
    pub heldout_objects: Vec<String>,
    /// Pretrained encoder; required in geometry-aware mode.
    pub encoder: Option<PathBuf>,
    pub finetune_encoder: bool,
    pub lr_encoder: f64,
    pub epochs: usize,
    /// Collect/update cycles per epoch; targets move once per cycle.
    pub cycles: usize,
    /// Rollouts per object per epoch.
    pub rollouts_per_epoch: usize,
    pub updates_per_epoch: usize,
    /// Evaluation episodes per object.
    pub eval_episodes: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub replay: ReplayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: PolicyMode::Vanilla,
            objects: PathBuf::from("objects/registry.json"),
            train_objects: Vec::new(),
            heldout: None,
            heldout_objects: Vec::new(),
            encoder: None,
            finetune_encoder: false,
            lr_encoder: 1e-4,
            epochs: 50,
            cycles: 10,
            rollouts_per_epoch: 20,
            updates_per_epoch: 400,
            eval_episodes: 20,
            eval_every: 1,
            checkpoint_every: 10,
            seed: 0,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            replay: ReplayConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env.validate()?;
        self.agent.validate()?;
        if self.epochs == 0 || self.cycles == 0 {
            return bad("epochs and cycles must be positive".into());
        }
        if self.rollouts_per_epoch == 0 || self.rollouts_per_epoch % self.cycles != 0 {
            return bad(format!(
                "rollouts_per_epoch ({}) must be a positive multiple of cycles ({})",
                self.rollouts_per_epoch, self.cycles
            ));
        }
        if self.updates_per_epoch % self.cycles != 0 {
            return bad(format!(
                "updates_per_epoch ({}) must be a multiple of cycles ({})",
                self.updates_per_epoch, self.cycles
            ));
        }
        if self.eval_episodes == 0 || self.eval_every == 0 || self.checkpoint_every == 0 {
            return bad("eval_episodes, eval_every and checkpoint_every must be positive".into());
        }
        if self.replay.capacity == 0 || !(self.replay.relabel_k >= 0.0) {
            return bad("replay capacity must be positive and relabel_k non-negative".into());
        }
        match (self.mode, &self.encoder) {
            (PolicyMode::GeometryAware, None) => {
                return bad("geometry-aware mode needs an encoder checkpoint".into())
            }
            (PolicyMode::Vanilla, Some(_)) => {
                return bad("vanilla mode takes no encoder".into())
            }
            _ => {}
        }
        if self.finetune_encoder && self.mode == PolicyMode::Vanilla {
            return bad("finetune_encoder needs geometry-aware mode".into());
        }
        if !(self.lr_encoder > 0.0) {
            return bad("lr_encoder must be positive".into());
        }
        if self.heldout.is_none() && !self.heldout_objects.is_empty() {
            return bad("heldout_objects given without a heldout registry".into());
        }
        if self.env.include_cloud != (self.mode == PolicyMode::GeometryAware) {
            return bad("env.include_cloud must be set exactly in geometry-aware mode".into());
        }
        Ok(())
    }

    /// Sets mode-dependent fields so the config validates.
    pub fn resolved(mut self) -> Self {
        self.env.include_cloud = self.mode == PolicyMode::GeometryAware;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Objects of `registry` restricted to `names` (all when empty), re-numbered
/// from `first_id`.
pub fn select_objects(registry: &Path, names: &[String], first_id: usize) -> Result<Vec<Arc<RigidObject>>> {
    let all = ObjectRegistry::load_objects(registry)?;
    let picked: Vec<Arc<RigidObject>> = if names.is_empty() {
        all
    } else {
        names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|o| &o.name == n)
                    .cloned()
                    .ok_or_else(|| HarnessError::Env(EnvError::UnknownObject(n.clone())))
            })
            .collect::<Result<_>>()?
    };
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let mut o = (*o).clone();
            o.id = first_id + i;
            Arc::new(o)
        })
        .collect())
}

pub(crate) mod purpose {
    pub const INIT: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const EVAL: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one (purpose, indices) combination.
pub(crate) fn stream_rng(seed: u64, purpose: u64, indices: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(purpose));
    for &i in indices {
        h = splitmix(h ^ i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}
