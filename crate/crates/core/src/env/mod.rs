//! Torque-rig proxy for in-hand rotation: a rigid body whose attitude is
//! driven by a fixed linear map from the 20-dim action to a 3-torque.
//!
//! Angular velocity is kept in the body frame. The step integrates Euler's
//! equations with an implicit midpoint rule for the gyroscopic term and an
//! implicit damping term, then advances the orientation by the quaternion
//! exponential of the new angular velocity.

mod physics;
mod registry;

pub use physics::{integrate_attitude, Mat3};
pub use registry::{
    named_shape, preset, ObjectEntry, ObjectRegistry, RigidObject, LONGEST_CAP, PRESETS,
    TARGET_SHORTEST,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshError, PointCloud};
use crate::rotmath::{geodesic_angle, random_rotation_so3, random_rotation_z, UnitQuaternion, Vec3};

pub const ACTION_DIM: usize = 20;
pub const PROPRIO_DIM: usize = 6;
pub const OBJECT_STATE_DIM: usize = 13;
pub const GOAL_DIM: usize = 4;
pub const OBS_DIM: usize = PROPRIO_DIM + OBJECT_STATE_DIM + GOAL_DIM;
pub const SUCCESS_ANGLE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("episode is over")]
    EpisodeOver,
    #[error("action must have {ACTION_DIM} finite components")]
    NonFiniteAction,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalMode {
    #[serde(rename = "z-axis")]
    ZAxis,
    #[serde(rename = "so3")]
    So3,
}

impl GoalMode {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> UnitQuaternion {
        match self {
            GoalMode::ZAxis => random_rotation_z(rng),
            GoalMode::So3 => random_rotation_so3(rng),
        }
    }
}

impl fmt::Display for GoalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalMode::ZAxis => "z-axis",
            GoalMode::So3 => "so3",
        })
    }
}

impl FromStr for GoalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "z-axis" | "z" => Ok(GoalMode::ZAxis),
            "so3" => Ok(GoalMode::So3),
            _ => Err(format!("unknown goal mode {s:?} (expected z-axis or so3)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Per-component torque limit (N·m).
    pub tau_max: f64,
    /// Viscous damping (N·m·s).
    pub damping: f64,
    pub mass: f64,
    pub episode_len: usize,
    pub dt: f64,
    /// Integration substeps per control step.
    pub substeps: usize,
    pub goal_mode: GoalMode,
    pub rest_position: Vec3,
    /// Variance of the per-coordinate initial position noise (m²).
    pub position_noise_var: f64,
    pub cloud_points: usize,
    pub include_cloud: bool,
    /// Seed of the fixed action-to-torque map shared by all objects.
    pub map_seed: u64,
    /// Diagnostic: the goal is the initial orientation.
    pub goal_is_initial: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tau_max: 0.005,
            damping: 0.001,
            mass: 0.2,
            episode_len: 50,
            dt: 1.0 / 25.0,
            substeps: 1,
            goal_mode: GoalMode::ZAxis,
            rest_position: [0.0; 3],
            position_noise_var: 5e-5,
            cloud_points: crate::mesh::DEFAULT_CLOUD_POINTS,
            include_cloud: false,
            map_seed: 0,
            goal_is_initial: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.tau_max > 0.0) || !self.tau_max.is_finite() {
            return bad("tau_max must be positive");
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return bad("damping must be non-negative");
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return bad("mass must be positive");
        }
        if self.episode_len == 0 || self.substeps == 0 {
            return bad("episode_len and substeps must be positive");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.position_noise_var >= 0.0) {
            return bad("position_noise_var must be non-negative");
        }
        if self.include_cloud && self.cloud_points == 0 {
            return bad("cloud_points must be positive");
        }
        Ok(())
    }
}

/// Fixed full-rank linear map from actions to world-frame torque.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueMap {
    rows: [[f64; ACTION_DIM]; 3],
}

impl TorqueMap {
    /// Gaussian entries scaled so that a uniform random action gives a
    /// per-component torque standard deviation of `tau_max`. Redrawn until
    /// the rows are well conditioned.
    pub fn seeded(seed: u64, tau_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = tau_max * (3.0 / ACTION_DIM as f64).sqrt();
        loop {
            let mut rows = [[0.0; ACTION_DIM]; 3];
            for row in rows.iter_mut() {
                for v in row.iter_mut() {
                    *v = sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let map = Self { rows };
            if map.gram_condition() < 10.0 {
                return map;
            }
        }
    }

    pub fn from_rows(rows: [[f64; ACTION_DIM]; 3]) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[[f64; ACTION_DIM]; 3] {
        &self.rows
    }

    /// Ratio of largest to smallest eigenvalue of `M·Mᵀ`, infinite if singular.
    pub fn gram_condition(&self) -> f64 {
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] = (0..ACTION_DIM).map(|k| self.rows[i][k] * self.rows[j][k]).sum();
            }
        }
        let eig = physics::symmetric_eigenvalues(&g);
        if eig[0] <= 0.0 {
            f64::INFINITY
        } else {
            eig[2] / eig[0]
        }
    }

    /// `clamp(M·a, ±tau_max)` per component.
    pub fn torque(&self, action: &[f64], tau_max: f64) -> Vec3 {
        let mut t = [0.0; 3];
        for (k, row) in self.rows.iter().enumerate() {
            let v: f64 = row.iter().zip(action).map(|(m, a)| m * a).sum();
            t[k] = v.clamp(-tau_max, tau_max);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub object_id: usize,
    pub orientation: UnitQuaternion,
    /// Body-frame angular velocity (rad/s).
    pub angular_velocity: Vec3,
    pub position: Vec3,
    pub linear_velocity: Vec3,
    pub goal: UnitQuaternion,
    pub step: usize,
    /// World-frame torque applied in the last step and the one before.
    pub torque: Vec3,
    pub prev_torque: Vec3,
}

/// Current and goal clouds built from one surface sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPair {
    pub current: PointCloud,
    pub goal: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub proprio: [f64; PROPRIO_DIM],
    pub object: [f64; OBJECT_STATE_DIM],
    pub goal: UnitQuaternion,
    pub achieved: UnitQuaternion,
    /// Seed of the surface sample behind `clouds`, so clouds for other
    /// orientations can be regenerated.
    pub cloud_seed: u64,
    pub clouds: Option<CloudPair>,
}

/// Quaternion components with `w ≥ 0`.
pub fn canonical(q: &UnitQuaternion) -> [f64; 4] {
    let a = q.to_array();
    if a[0] < 0.0 {
        a.map(|v| -v)
    } else {
        a
    }
}

impl Observation {
    /// `[s_r, s_o, g]`, 23 numbers.
    pub fn flat(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..PROPRIO_DIM].copy_from_slice(&self.proprio);
        out[PROPRIO_DIM..PROPRIO_DIM + OBJECT_STATE_DIM].copy_from_slice(&self.object);
        out[PROPRIO_DIM + OBJECT_STATE_DIM..].copy_from_slice(&canonical(&self.goal));
        out
    }

    /// Same observation with a substituted goal.
    pub fn with_goal(&self, goal: UnitQuaternion) -> Self {
        Self {
            goal,
            clouds: None,
            ..self.clone()
        }
    }
}

/// 1 iff the geodesic angle is at most 0.1 rad.
pub fn compute_reward(achieved: &UnitQuaternion, goal: &UnitQuaternion) -> f64 {
    if geodesic_angle(achieved, goal) <= SUCCESS_ANGLE {
        1.0
    } else {
        0.0
    }
}

/// Surface sample `seed` of `object` at the two orientations.
pub fn cloud_pair(
    object: &RigidObject,
    seed: u64,
    points: usize,
    current: &UnitQuaternion,
    goal: &UnitQuaternion,
) -> CloudPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = object.mesh.sample_surface(points, &mut rng);
    CloudPair {
        current: base.rotated(&current.to_matrix()),
        goal: base.rotated(&goal.to_matrix()),
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// One environment instance bound to one object.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    object: Arc<RigidObject>,
    map: Arc<TorqueMap>,
    state: EnvState,
}

impl Env {
    pub fn new(config: EnvConfig, object: Arc<RigidObject>, map: Arc<TorqueMap>) -> Result<Self> {
        config.validate()?;
        let state = EnvState {
            object_id: object.id,
            orientation: UnitQuaternion::IDENTITY,
            angular_velocity: [0.0; 3],
            position: config.rest_position,
            linear_velocity: [0.0; 3],
            goal: UnitQuaternion::IDENTITY,
            step: 0,
            torque: [0.0; 3],
            prev_torque: [0.0; 3],
        };
        Ok(Self {
            config,
            object,
            map,
            state,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn object(&self) -> &Arc<RigidObject> {
        &self.object
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    /// Position noise, independent initial and goal orientations, zero
    /// velocities.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let std = self.config.position_noise_var.sqrt();
        let mut position = self.config.rest_position;
        for p in position.iter_mut() {
            *p += std * rng.sample::<f64, _>(StandardNormal);
        }
        let orientation = self.config.goal_mode.sample(rng);
        let goal = self.config.goal_mode.sample(rng);
        self.state = EnvState {
            object_id: self.object.id,
            orientation,
            angular_velocity: [0.0; 3],
            position,
            linear_velocity: [0.0; 3],
            goal: if self.config.goal_is_initial {
                orientation
            } else {
                goal
            },
            step: 0,
            torque: [0.0; 3],
            prev_torque: [0.0; 3],
        };
        self.observe(rng)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<StepOutcome> {
        if self.state.step >= self.config.episode_len {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        let torque = self.map.torque(action, self.config.tau_max);
        self.apply_torque(torque);
        let reward = compute_reward(&self.state.orientation, &self.state.goal);
        let done = self.state.step >= self.config.episode_len;
        Ok(StepOutcome {
            observation: self.observe(rng),
            reward,
            done,
        })
    }

    /// Advances one control step under a world-frame torque.
    pub fn apply_torque(&mut self, torque_world: Vec3) {
        let s = &mut self.state;
        let body_torque = s.orientation.conjugate().rotate(&torque_world);
        let h = self.config.dt / self.config.substeps as f64;
        for _ in 0..self.config.substeps {
            let (q, w) = integrate_attitude(
                &s.orientation,
                &s.angular_velocity,
                &body_torque,
                &self.object.inertia,
                self.config.damping,
                h,
            );
            s.orientation = q;
            s.angular_velocity = w;
        }
        s.prev_torque = s.torque;
        s.torque = torque_world;
        s.step += 1;
    }

    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let s = &self.state;
        let tm = self.config.tau_max;
        let mut proprio = [0.0; PROPRIO_DIM];
        for k in 0..3 {
            proprio[k] = s.torque[k] / tm;
            proprio[3 + k] = (s.torque[k] - s.prev_torque[k]) / tm;
        }
        let mut object = [0.0; OBJECT_STATE_DIM];
        object[..3].copy_from_slice(&s.position);
        object[3..7].copy_from_slice(&canonical(&s.orientation));
        object[7..10].copy_from_slice(&s.linear_velocity);
        object[10..13].copy_from_slice(&s.orientation.rotate(&s.angular_velocity));
        let (cloud_seed, clouds) = if self.config.include_cloud {
            let seed = rng.random::<u64>();
            let pair = cloud_pair(
                &self.object,
                seed,
                self.config.cloud_points,
                &s.orientation,
                &s.goal,
            );
            (seed, Some(pair))
        } else {
            (0, None)
        };
        Observation {
            proprio,
            object,
            goal: s.goal,
            achieved: s.orientation,
            cloud_seed,
            clouds,
        }
    }

    /// Rotational kinetic energy `½ ωᵀ I ω`.
    pub fn kinetic_energy(&self) -> f64 {
        let w = &self.state.angular_velocity;
        let iw = physics::mat_vec(&self.object.inertia, w);
        0.5 * (w[0] * iw[0] + w[1] * iw[1] + w[2] * iw[2])
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeLogLine {
    pub step: usize,
    pub action: Vec<f64>,
    pub orientation: [f64; 4],
    pub reward: f64,
}

/// Writes one JSONL line per step.
pub fn write_episode_log<W: Write>(out: &mut W, lines: &[EpisodeLogLine]) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut *out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episode_log(text: &str) -> Result<Vec<EpisodeLogLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(EnvError::from))
        .collect()
}

/// Replays logged actions from `start`, returning the per-step log it
/// produces.
pub fn replay_actions(env: &mut Env, start: EnvState, actions: &[Vec<f64>]) -> Result<Vec<EpisodeLogLine>> {
    env.set_state(start);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(actions.len());
    for a in actions {
        let o = env.step(a, &mut rng)?;
        out.push(EpisodeLogLine {
            step: env.state().step,
            action: a.clone(),
            orientation: env.state().orientation.to_array(),
            reward: o.reward,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
