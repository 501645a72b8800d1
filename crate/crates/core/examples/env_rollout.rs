//! Drive the in-hand rotation proxy with random and zero actions and watch
//! the geodesic distance to the goal.

use std::sync::Arc;

use geodex::env::{named_shape, Env, EnvConfig, RigidObject, TorqueMap, ACTION_DIM};
use geodex::rotmath::geodesic_angle;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EnvConfig {
        include_cloud: true,
        cloud_points: 32,
        ..EnvConfig::default()
    };
    let map = Arc::new(TorqueMap::seeded(config.map_seed, config.tau_max));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for name in ["cube", "rod"] {
        let obj = Arc::new(RigidObject::from_spec(0, &named_shape(name).unwrap(), 0.2)?);
        let mut env = Env::new(config.clone(), obj, map.clone())?;
        let obs = env.reset(&mut rng);
        println!(
            "{name}: start {:.3} rad from goal, cloud of {} points",
            geodesic_angle(&obs.achieved, &obs.goal),
            obs.clouds.as_ref().map_or(0, |c| c.current.len())
        );
        let mut action = [0.0; ACTION_DIM];
        for t in 0..config.episode_len {
            if t % 10 == 0 {
                action = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            }
            let out = env.step(&action, &mut rng)?;
            if t % 10 == 9 {
                let o = &out.observation;
                println!(
                    "  t={:>2} distance {:.3} rad  |w| {:.2} rad/s  reward {}",
                    t + 1,
                    geodesic_angle(&o.achieved, &o.goal),
                    env.state().angular_velocity.iter().map(|w| w * w).sum::<f64>().sqrt(),
                    out.reward
                );
            }
        }
    }
    Ok(())
}
