//! Store random episodes and draw hindsight-relabeled batches.

use std::sync::Arc;

use geodex::env::{named_shape, Env, EnvConfig, RigidObject, TorqueMap, ACTION_DIM};
use geodex::replay::{relabel_probability, EpisodeBuffer, Transition};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EnvConfig::default();
    let map = Arc::new(TorqueMap::seeded(config.map_seed, config.tau_max));
    let obj = Arc::new(RigidObject::from_spec(0, &named_shape("cube").unwrap(), 0.2)?);
    let mut env = Env::new(config.clone(), obj, map)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buffer = EpisodeBuffer::new(100);
    for _ in 0..20 {
        let mut obs = env.reset(&mut rng);
        let mut episode = Vec::new();
        for t in 0..config.episode_len {
            let a: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            let out = env.step(&a, &mut rng)?;
            let next = out.observation;
            episode.push(Transition {
                object_id: 0,
                t,
                obs,
                action: a,
                reward: out.reward,
                achieved: next.achieved,
                goal: next.goal,
                next_obs: next.clone(),
                done: out.done,
                relabeled: false,
            });
            obs = next;
        }
        buffer.insert(episode)?;
    }
    let stored: f64 = buffer.transitions(0) as f64;
    for k in [0.0, 4.0] {
        let batch = buffer.her_sample(10_000, k, &mut rng)?;
        let relabeled = batch.iter().filter(|t| t.relabeled).count() as f64 / batch.len() as f64;
        let reward = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
        println!(
            "k={k}: relabeled {relabeled:.3} (expected {:.3}), mean reward {reward:.3}",
            relabel_probability(k)
        );
    }
    println!("{stored} transitions stored");
    Ok(())
}
