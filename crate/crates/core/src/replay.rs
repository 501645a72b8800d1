//! Episode storage with hindsight goal relabeling ("future" strategy).

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{compute_reward, Observation, ACTION_DIM, OBJECT_STATE_DIM, PROPRIO_DIM};
use crate::nn::{Checkpoint, CheckpointEntry, NnError};
use crate::rotmath::UnitQuaternion;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed episode: {0}")]
    MalformedEpisode(String),
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ReplayError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub object_id: usize,
    /// Step index within the episode.
    pub t: usize,
    pub obs: Observation,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: Observation,
    /// Orientation reached after the action.
    pub achieved: UnitQuaternion,
    pub goal: UnitQuaternion,
    pub done: bool,
    pub relabeled: bool,
}

#[derive(Debug, Clone)]
struct Episode {
    transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Default)]
struct ObjectRing {
    episodes: VecDeque<Arc<Episode>>,
    /// `prefix[i]` = transitions stored in episodes `0..i`.
    prefix: Vec<usize>,
}

impl ObjectRing {
    fn rebuild(&mut self) {
        self.prefix.clear();
        let mut total = 0;
        self.prefix.push(0);
        for e in &self.episodes {
            total += e.transitions.len();
            self.prefix.push(total);
        }
    }

    fn len(&self) -> usize {
        *self.prefix.last().unwrap_or(&0)
    }

    fn locate(&self, index: usize) -> (&Episode, usize) {
        let e = self.prefix.partition_point(|&p| p <= index) - 1;
        (&self.episodes[e], index - self.prefix[e])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Episodes kept per object.
    pub capacity: usize,
    /// Relabel ratio: a sampled transition is relabeled with probability
    /// `k/(k+1)`.
    pub relabel_k: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 1000,
            relabel_k: 4.0,
        }
    }
}

/// Per-object FIFO rings of whole episodes.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    capacity: usize,
    rings: BTreeMap<usize, ObjectRing>,
    inserted: u64,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            rings: BTreeMap::new(),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Episodes inserted since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn episodes(&self, object_id: usize) -> usize {
        self.rings.get(&object_id).map_or(0, |r| r.episodes.len())
    }

    pub fn transitions(&self, object_id: usize) -> usize {
        self.rings.get(&object_id).map_or(0, |r| r.len())
    }

    pub fn object_ids(&self) -> Vec<usize> {
        self.rings.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rings.values().all(|r| r.len() == 0)
    }

    pub fn insert(&mut self, episode: Vec<Transition>) -> Result<()> {
        validate_episode(&episode)?;
        let id = episode[0].object_id;
        let ring = self.rings.entry(id).or_default();
        if ring.episodes.len() == self.capacity {
            ring.episodes.pop_front();
        }
        ring.episodes.push_back(Arc::new(Episode {
            transitions: episode,
        }));
        ring.rebuild();
        self.inserted += 1;
        Ok(())
    }

    /// Samples transitions with equal weight per object, then uniformly
    /// within the object.
    pub fn her_sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        relabel_k: f64,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        let ids: Vec<usize> = self
            .rings
            .iter()
            .filter(|(_, r)| r.len() > 0)
            .map(|(&k, _)| k)
            .collect();
        if ids.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let p = relabel_probability(relabel_k);
        (0..batch)
            .map(|_| {
                let id = ids[rng.random_range(0..ids.len())];
                Ok(self.sample_one(&self.rings[&id], p, rng))
            })
            .collect()
    }

    /// Samples from one object's episodes only.
    pub fn her_sample_object<R: Rng + ?Sized>(
        &self,
        object_id: usize,
        batch: usize,
        relabel_k: f64,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        let ring = self
            .rings
            .get(&object_id)
            .filter(|r| r.len() > 0)
            .ok_or(ReplayError::EmptyBuffer)?;
        let p = relabel_probability(relabel_k);
        Ok((0..batch).map(|_| self.sample_one(ring, p, rng)).collect())
    }

    fn sample_one<R: Rng + ?Sized>(&self, ring: &ObjectRing, p: f64, rng: &mut R) -> Transition {
        let index = rng.random_range(0..ring.len());
        let (episode, t) = ring.locate(index);
        let mut tr = episode.transitions[t].clone();
        if p > 0.0 && rng.random::<f64>() < p {
            let future = rng.random_range(t..episode.transitions.len());
            let goal = episode.transitions[future].achieved;
            tr.goal = goal;
            tr.obs = tr.obs.with_goal(goal);
            tr.next_obs = tr.next_obs.with_goal(goal);
            tr.reward = compute_reward(&tr.achieved, &goal);
            tr.relabeled = true;
        }
        tr
    }

    /// Serializes the buffer into the shared checkpoint container.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "capacity": self.capacity,
            "inserted": self.inserted,
        })
        .to_string();
        let mut ck = Checkpoint::new(SNAPSHOT_COMPONENT, meta);
        for (&id, ring) in &self.rings {
            let mut values = vec![ring.episodes.len() as f64];
            for e in &ring.episodes {
                values.push(e.transitions.len() as f64);
                for tr in &e.transitions {
                    encode_transition(tr, &mut values);
                }
            }
            ck.push(CheckpointEntry::raw(format!("object_{id}"), values));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(SNAPSHOT_COMPONENT)?;
        let meta: serde_json::Value = serde_json::from_str(&ck.meta)
            .map_err(|e| ReplayError::Snapshot(e.to_string()))?;
        let field = |k: &str| {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ReplayError::Snapshot(format!("missing {k}")))
        };
        let mut buf = EpisodeBuffer::new(field("capacity")? as usize);
        buf.inserted = field("inserted")?;
        for entry in &ck.entries {
            let id: usize = entry
                .name
                .strip_prefix("object_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ReplayError::Snapshot(format!("bad entry {}", entry.name)))?;
            let mut cur = Cursor {
                values: &entry.values,
                pos: 0,
            };
            let n_eps = cur.count()?;
            let ring = buf.rings.entry(id).or_default();
            for _ in 0..n_eps {
                let n = cur.count()?;
                let transitions = (0..n)
                    .map(|_| decode_transition(id, &mut cur))
                    .collect::<Result<Vec<_>>>()?;
                ring.episodes.push_back(Arc::new(Episode { transitions }));
            }
            if cur.pos != entry.values.len() {
                return Err(ReplayError::Snapshot("trailing values".into()));
            }
            ring.rebuild();
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

const SNAPSHOT_COMPONENT: &str = "replay";

pub fn relabel_probability(k: f64) -> f64 {
    if k <= 0.0 {
        0.0
    } else {
        k / (k + 1.0)
    }
}

fn validate_episode(episode: &[Transition]) -> Result<()> {
    let bad = |m: String| Err(ReplayError::MalformedEpisode(m));
    let Some(first) = episode.first() else {
        return bad("empty episode".into());
    };
    for (i, tr) in episode.iter().enumerate() {
        if tr.object_id != first.object_id {
            return bad(format!("mixed object ids {} and {}", first.object_id, tr.object_id));
        }
        if tr.t != first.t + i {
            return bad(format!("step {} follows step {}", tr.t, first.t + i - 1));
        }
        if tr.reward != 0.0 && tr.reward != 1.0 {
            return bad(format!("reward {} not in {{0, 1}}", tr.reward));
        }
        if i > 0 && episode[i - 1].next_obs != tr.obs {
            return bad(format!("observation gap before step {}", tr.t));
        }
    }
    Ok(())
}

// Fixed-width numeric record:
// t, obs, action, reward, next_obs, achieved, goal, done, relabeled
const OBS_RECORD: usize = PROPRIO_DIM + OBJECT_STATE_DIM + 4 + 4 + 1;

fn encode_obs(o: &Observation, out: &mut Vec<f64>) {
    out.extend_from_slice(&o.proprio);
    out.extend_from_slice(&o.object);
    out.extend_from_slice(&o.goal.to_array());
    out.extend_from_slice(&o.achieved.to_array());
    out.push(f64::from_bits(o.cloud_seed));
}

fn encode_transition(tr: &Transition, out: &mut Vec<f64>) {
    out.push(tr.t as f64);
    encode_obs(&tr.obs, out);
    out.extend_from_slice(&tr.action);
    out.push(tr.reward);
    encode_obs(&tr.next_obs, out);
    out.extend_from_slice(&tr.achieved.to_array());
    out.extend_from_slice(&tr.goal.to_array());
    out.push(if tr.done { 1.0 } else { 0.0 });
    out.push(if tr.relabeled { 1.0 } else { 0.0 });
}

struct Cursor<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let end = self.pos + n;
        if end > self.values.len() {
            return Err(ReplayError::Snapshot("truncated".into()));
        }
        let s = &self.values[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn one(&mut self) -> Result<f64> {
        Ok(self.take(1)?[0])
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.one()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(ReplayError::Snapshot(format!("bad count {v}")));
        }
        Ok(v as usize)
    }

    fn quat(&mut self) -> Result<UnitQuaternion> {
        let s = self.take(4)?;
        UnitQuaternion::from_stored([s[0], s[1], s[2], s[3]])
            .map_err(|e| ReplayError::Snapshot(e.to_string()))
    }

    fn obs(&mut self) -> Result<Observation> {
        let s = self.take(PROPRIO_DIM + OBJECT_STATE_DIM)?;
        let mut proprio = [0.0; PROPRIO_DIM];
        proprio.copy_from_slice(&s[..PROPRIO_DIM]);
        let mut object = [0.0; OBJECT_STATE_DIM];
        object.copy_from_slice(&s[PROPRIO_DIM..]);
        let goal = self.quat()?;
        let achieved = self.quat()?;
        let cloud_seed = self.one()?.to_bits();
        Ok(Observation {
            proprio,
            object,
            goal,
            achieved,
            cloud_seed,
            clouds: None,
        })
    }
}

fn decode_transition(object_id: usize, cur: &mut Cursor<'_>) -> Result<Transition> {
    let t = cur.count()?;
    let obs = cur.obs()?;
    let mut action = [0.0; ACTION_DIM];
    action.copy_from_slice(cur.take(ACTION_DIM)?);
    let reward = cur.one()?;
    let next_obs = cur.obs()?;
    let achieved = cur.quat()?;
    let goal = cur.quat()?;
    let done = cur.one()? != 0.0;
    let relabeled = cur.one()? != 0.0;
    Ok(Transition {
        object_id,
        t,
        obs,
        action,
        reward,
        next_obs,
        achieved,
        goal,
        done,
        relabeled,
    })
}

const _: () = assert!(OBS_RECORD == 28);

/// Buffer shared between rollout producers and the learner. Each insert and
/// each sample holds the lock for its whole duration.
#[derive(Debug, Clone)]
pub struct SharedBuffer {
    inner: Arc<Mutex<EpisodeBuffer>>,
}

impl SharedBuffer {
    pub fn new(buffer: EpisodeBuffer) -> Self {
        Self {
            inner: Arc::new(Mutex::new(buffer)),
        }
    }

    pub fn insert(&self, episode: Vec<Transition>) -> Result<()> {
        self.inner.lock().expect("buffer lock").insert(episode)
    }

    pub fn her_sample_object<R: Rng + ?Sized>(
        &self,
        object_id: usize,
        batch: usize,
        relabel_k: f64,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        self.inner
            .lock()
            .expect("buffer lock")
            .her_sample_object(object_id, batch, relabel_k, rng)
    }

    pub fn with<T>(&self, f: impl FnOnce(&EpisodeBuffer) -> T) -> T {
        f(&self.inner.lock().expect("buffer lock"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::geodesic_angle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn obs(angle: f64, goal: f64) -> Observation {
        Observation {
            proprio: [0.0; PROPRIO_DIM],
            object: [angle; OBJECT_STATE_DIM],
            goal: UnitQuaternion::about_z(goal),
            achieved: UnitQuaternion::about_z(angle),
            cloud_seed: (angle * 1000.0) as u64,
            clouds: None,
        }
    }

    /// Object spins by 0.3 rad per step towards a goal at 1.0 rad.
    pub(crate) fn episode(object_id: usize, len: usize, offset: f64) -> Vec<Transition> {
        let goal = 1.0;
        (0..len)
            .map(|t| {
                let a = offset + 0.3 * t as f64;
                let next = offset + 0.3 * (t + 1) as f64;
                let achieved = UnitQuaternion::about_z(next);
                let g = UnitQuaternion::about_z(goal);
                Transition {
                    object_id,
                    t,
                    obs: obs(a, goal),
                    action: [t as f64 / 100.0; ACTION_DIM],
                    reward: compute_reward(&achieved, &g),
                    next_obs: obs(next, goal),
                    achieved,
                    goal: g,
                    done: t + 1 == len,
                    relabeled: false,
                }
            })
            .collect()
    }

    #[test]
    fn zero_relabel_returns_stored_transitions() {
        let mut b = EpisodeBuffer::new(10);
        let ep = episode(0, 5, 0.0);
        b.insert(ep.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for tr in b.her_sample(50, 0.0, &mut rng).unwrap() {
            assert!(ep.contains(&tr));
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = EpisodeBuffer::new(2);
        for k in 0..3 {
            b.insert(episode(0, 4, k as f64 * 10.0)).unwrap();
        }
        assert_eq!(b.episodes(0), 2);
        assert_eq!(b.inserted(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tr in b.her_sample(200, 0.0, &mut rng).unwrap() {
            assert!(tr.obs.object[0] >= 10.0, "first episode should be gone");
        }
    }

    #[test]
    fn malformed_episodes_are_rejected() {
        let mut b = EpisodeBuffer::new(2);
        let mut mixed = episode(0, 4, 0.0);
        mixed[2].object_id = 1;
        assert!(matches!(b.insert(mixed), Err(ReplayError::MalformedEpisode(_))));
        assert!(b.insert(Vec::new()).is_err());
        let mut gap = episode(0, 4, 0.0);
        gap.remove(1);
        assert!(b.insert(gap).is_err());
        assert!(b.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.her_sample(1, 4.0, &mut rng), Err(ReplayError::EmptyBuffer)));
    }

    #[test]
    fn relabeled_rewards_are_consistent_and_future() {
        let mut b = EpisodeBuffer::new(5);
        b.insert(episode(0, 10, 0.0)).unwrap();
        b.insert(episode(0, 10, 0.05)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut own_goal_seen = false;
        for tr in b.her_sample(2000, 4.0, &mut rng).unwrap() {
            assert_eq!(tr.reward, compute_reward(&tr.achieved, &tr.goal));
            assert_eq!(tr.obs.goal, tr.goal);
            assert_eq!(tr.next_obs.goal, tr.goal);
            if tr.relabeled {
                // goals are achieved angles of steps at or after this one
                let goal_angle = 2.0 * tr.goal.z().atan2(tr.goal.w());
                let own = 2.0 * tr.achieved.z().atan2(tr.achieved.w());
                assert!(goal_angle >= own - 1e-12);
                if geodesic_angle(&tr.goal, &tr.achieved) == 0.0 {
                    own_goal_seen = true;
                    assert_eq!(tr.reward, 1.0);
                }
            }
        }
        assert!(own_goal_seen);
    }

    #[test]
    fn per_object_sampling_and_snapshot() {
        let mut b = EpisodeBuffer::new(3);
        b.insert(episode(0, 6, 0.0)).unwrap();
        b.insert(episode(2, 4, 0.5)).unwrap();
        b.insert(episode(2, 4, 0.7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(b
            .her_sample_object(2, 30, 4.0, &mut rng)
            .unwrap()
            .iter()
            .all(|t| t.object_id == 2));
        assert!(b.her_sample_object(1, 3, 4.0, &mut rng).is_err());

        let bytes = b.to_checkpoint().to_bytes();
        let back = EpisodeBuffer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            b.her_sample(100, 4.0, &mut r1).unwrap(),
            back.her_sample(100, 4.0, &mut r2).unwrap()
        );
    }

    #[test]
    fn shared_buffer_accepts_concurrent_producers() {
        let shared = SharedBuffer::new(EpisodeBuffer::new(100));
        std::thread::scope(|s| {
            for id in 0..4 {
                let sh = shared.clone();
                s.spawn(move || {
                    for k in 0..10 {
                        sh.insert(episode(id, 5, k as f64)).unwrap();
                    }
                });
            }
        });
        shared.with(|b| {
            assert_eq!(b.inserted(), 40);
            for id in 0..4 {
                assert_eq!(b.transitions(id), 50);
            }
        });
    }
}
