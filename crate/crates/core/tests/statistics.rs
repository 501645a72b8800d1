//! Sampling distributions checked against their closed forms.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use geodex::encoder::make_pretrain_batch;
use geodex::env::{named_shape, Env, EnvConfig, RigidObject, TorqueMap, ACTION_DIM};
use geodex::harness::{evaluate, RandomPolicy};
use geodex::mesh::Mesh;
use geodex::replay::{EpisodeBuffer, Transition};
use geodex::rotmath::{random_rotation_so3, random_rotation_z, UnitQuaternion};

/// Upper-tail p-value of Pearson's statistic.
fn chi2_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

fn within_binomial_3sigma(hits: u64, n: u64, p: f64) -> bool {
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - n as f64 * p).abs() <= 3.0 * sigma
}

#[test]
fn z_rotation_angles_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bins = 20;
    let mut counts = vec![0u64; bins];
    let n = 10_000;
    for _ in 0..n {
        let q = random_rotation_z(&mut rng);
        let theta = (2.0 * q.z().atan2(q.w())).rem_euclid(std::f64::consts::TAU);
        counts[((theta / std::f64::consts::TAU) * bins as f64) as usize % bins] += 1;
    }
    let p = chi2_p(&counts, &vec![n as f64 / bins as f64; bins]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn so3_rotations_follow_the_haar_measure() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let fixed = UnitQuaternion::normalize([0.3, -0.5, 0.7, 0.1]).unwrap();
    let bins = 20;
    let mut counts = vec![0u64; bins];
    let mut dots = Vec::with_capacity(n);
    for _ in 0..n {
        let q = random_rotation_so3(&mut rng);
        dots.push(q.dot(&fixed));
        let theta = q.angle();
        counts[((theta / std::f64::consts::PI) * bins as f64).min(bins as f64 - 1.0) as usize] += 1;
    }
    // angle density (1 - cos θ)/π, CDF (θ - sin θ)/π
    let cdf = |t: f64| (t - t.sin()) / std::f64::consts::PI;
    let expected: Vec<f64> = (0..bins)
        .map(|i| {
            let (a, b) = (i as f64, i as f64 + 1.0);
            let w = std::f64::consts::PI / bins as f64;
            n as f64 * (cdf(b * w) - cdf(a * w))
        })
        .collect();
    let p = chi2_p(&counts, &expected);
    assert!(p > 0.01, "angle histogram p = {p}");

    // each component of a Haar quaternion has variance 1/4
    let mean = dots.iter().sum::<f64>() / n as f64;
    let sigma = (0.25 / n as f64).sqrt();
    assert!(mean.abs() <= 3.0 * sigma, "mean dot {mean}");
}

#[test]
fn surface_samples_follow_face_areas() {
    // areas 1 and 3 on perpendicular planes, so the normal names the face
    let vertices = vec![
        [0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 3.0, 0.0],
        [0.0, 0.0, 2.0],
    ];
    let (mesh, dropped) = Mesh::new("pair", vertices, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
    assert_eq!(dropped, 0);
    assert!((mesh.face_area(0) - 1.0).abs() < 1e-12 && (mesh.face_area(1) - 3.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000u64;
    let cloud = mesh.sample_surface(n as usize, &mut rng);
    let second = cloud.normals.iter().filter(|nrm| nrm[0].abs() > 0.5).count() as u64;
    assert!(within_binomial_3sigma(second, n, 0.75), "{second} of {n}");
    let p = chi2_p(&[n - second, second], &[0.25 * n as f64, 0.75 * n as f64]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn pretraining_labels_are_balanced() {
    let meshes: Vec<Mesh> = ["cube", "rod", "disk", "sphere"]
        .iter()
        .map(|n| RigidObject::from_spec(0, &named_shape(n).unwrap(), 0.2).unwrap().mesh)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000u64;
    let batch = make_pretrain_batch(&meshes, n as usize, 4, true, &mut rng).unwrap();
    let mut counts = vec![0u64; meshes.len()];
    for it in &batch.items {
        counts[it.label] += 1;
    }
    for &c in &counts {
        assert!(within_binomial_3sigma(c, n, 0.25), "{counts:?}");
    }
}

fn cube_env(config: EnvConfig) -> Env {
    let obj = Arc::new(RigidObject::from_spec(0, &named_shape("cube").unwrap(), 0.2).unwrap());
    let map = Arc::new(TorqueMap::seeded(config.map_seed, config.tau_max));
    Env::new(config, obj, map).unwrap()
}

#[test]
fn reset_position_noise_has_the_configured_variance() {
    let config = EnvConfig::default();
    let var = config.position_noise_var;
    let mut env = cube_env(config);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut pos = Vec::with_capacity(n);
    for _ in 0..n {
        env.reset(&mut rng);
        pos.push(env.state().position);
    }
    for k in 0..3 {
        let mean = pos.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let s2 = pos.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma = var * (2.0 / (n - 1) as f64).sqrt();
        assert!((s2 - var).abs() <= 3.0 * sigma, "axis {k}: {s2}");
    }
}

fn random_episode(env: &mut Env, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    let mut obs = env.reset(rng);
    let mut episode = Vec::new();
    for t in 0..env.config().episode_len {
        let a: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let out = env.step(&a, rng).unwrap();
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
    episode
}

#[test]
fn relabel_fraction_matches_k_over_k_plus_one() {
    let mut env = cube_env(EnvConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut buf = EpisodeBuffer::new(100);
    for _ in 0..10 {
        buf.insert(random_episode(&mut env, &mut rng)).unwrap();
    }
    let n = 100_000u64;
    let sample = buf.her_sample(n as usize, 4.0, &mut rng).unwrap();
    let relabeled = sample.iter().filter(|t| t.relabeled).count() as u64;
    assert!(within_binomial_3sigma(relabeled, n, 0.8), "{relabeled} of {n}");
}

#[test]
fn sampling_is_uniform_over_transitions() {
    let config = EnvConfig {
        episode_len: 12,
        ..EnvConfig::default()
    };
    let mut env = cube_env(config);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut buf = EpisodeBuffer::new(10);
    let episodes: Vec<_> = (0..3).map(|_| random_episode(&mut env, &mut rng)).collect();
    for e in &episodes {
        buf.insert(e.clone()).unwrap();
    }
    let n = 36_000;
    let sample = buf.her_sample(n, 0.0, &mut rng).unwrap();
    let mut counts = vec![0u64; 36];
    for tr in &sample {
        let ep = episodes
            .iter()
            .position(|e| e[tr.t].obs == tr.obs)
            .expect("sampled transition is stored");
        counts[ep * 12 + tr.t] += 1;
    }
    let p = chi2_p(&counts, &[n as f64 / 36.0; 36]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn random_policy_scores_the_chance_rate() {
    for name in ["cube", "rod"] {
        let obj = Arc::new(RigidObject::from_spec(0, &named_shape(name).unwrap(), 0.2).unwrap());
        let config = EnvConfig::default();
        let map = Arc::new(TorqueMap::seeded(config.map_seed, config.tau_max));

        // brute-force baseline: 1000 independent uniform-action episodes
        let mut env = Env::new(config.clone(), obj.clone(), map.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 1000u64;
        let mut wins = 0u64;
        for _ in 0..trials {
            env.reset(&mut rng);
            let mut last = 0.0;
            for _ in 0..config.episode_len {
                let a: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                last = env.step(&a, &mut rng).unwrap().reward;
            }
            wins += last as u64;
        }
        let chance = wins as f64 / trials as f64;

        let episodes = 400;
        let stats = evaluate(&RandomPolicy, None, &[obj], &config, &map, episodes, 9, 0).unwrap();
        let rate = stats[0].success;
        let p = chance.max(1.0 / trials as f64);
        let sigma = (p * (1.0 - p) * (1.0 / trials as f64 + 1.0 / episodes as f64)).sqrt();
        assert!((rate - chance).abs() <= 3.0 * sigma, "{name}: policy {rate} vs chance {chance}");
    }
}
