use super::*;
use crate::mesh::ShapeSpec;
use crate::rotmath::dot3;

fn object(spec: ShapeSpec) -> Arc<RigidObject> {
    Arc::new(RigidObject::from_spec(0, &spec, 0.2).unwrap())
}

fn cube() -> Arc<RigidObject> {
    object(ShapeSpec::Box {
        size: [1.0, 1.0, 1.0],
    })
}

fn env_with(config: EnvConfig, obj: Arc<RigidObject>) -> Env {
    let map = Arc::new(TorqueMap::seeded(config.map_seed, config.tau_max));
    Env::new(config, obj, map).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn z_axis_goals_have_exact_z_axis() {
    let mut env = env_with(EnvConfig::default(), cube());
    let mut r = rng(0);
    for _ in 0..50 {
        env.reset(&mut r);
        for q in [env.state().goal, env.state().orientation] {
            assert_eq!(q.x(), 0.0);
            assert_eq!(q.y(), 0.0);
        }
    }
}

#[test]
fn same_seed_gives_same_reset() {
    let mut a = env_with(EnvConfig::default(), cube());
    let mut b = env_with(EnvConfig::default(), cube());
    assert_eq!(a.reset(&mut rng(9)), b.reset(&mut rng(9)));
    assert_eq!(a.state(), b.state());
}

#[test]
fn zero_action_from_rest_only_advances_step() {
    let mut env = env_with(EnvConfig::default(), cube());
    let mut r = rng(1);
    env.reset(&mut r);
    let before = env.state().clone();
    env.step(&[0.0; ACTION_DIM], &mut r).unwrap();
    let after = env.state();
    assert_eq!(after.orientation, before.orientation);
    assert_eq!(after.angular_velocity, before.angular_velocity);
    assert_eq!(after.position, before.position);
    assert_eq!(after.step, before.step + 1);
}

#[test]
fn episode_ends_and_rejects_extra_steps() {
    let cfg = EnvConfig {
        episode_len: 3,
        ..EnvConfig::default()
    };
    let mut env = env_with(cfg, cube());
    let mut r = rng(2);
    env.reset(&mut r);
    let a = [0.1; ACTION_DIM];
    assert!(!env.step(&a, &mut r).unwrap().done);
    assert!(!env.step(&a, &mut r).unwrap().done);
    assert!(env.step(&a, &mut r).unwrap().done);
    assert!(matches!(env.step(&a, &mut r), Err(EnvError::EpisodeOver)));
}

#[test]
fn bad_actions_are_rejected() {
    let mut env = env_with(EnvConfig::default(), cube());
    let mut r = rng(3);
    env.reset(&mut r);
    let mut a = [0.0; ACTION_DIM];
    a[4] = f64::NAN;
    assert!(matches!(env.step(&a, &mut r), Err(EnvError::NonFiniteAction)));
    assert!(matches!(env.step(&[0.0; 3], &mut r), Err(EnvError::NonFiniteAction)));
}

#[test]
fn principal_axis_spin_up_is_linear() {
    let cfg = EnvConfig {
        damping: 0.0,
        ..EnvConfig::default()
    };
    let obj = cube();
    let i_zz = obj.inertia[2][2];
    let mut env = env_with(cfg, obj);
    let tau = 0.01;
    for k in 1..=5 {
        env.apply_torque([0.0, 0.0, tau]);
        let expected = tau / i_zz * k as f64 * env.config().dt;
        let got = env.state().angular_velocity[2];
        assert!(((got - expected) / expected).abs() < 0.01, "{got} vs {expected}");
    }
}

#[test]
fn torque_free_energy_is_conserved() {
    let cfg = EnvConfig {
        damping: 0.0,
        ..EnvConfig::default()
    };
    let obj = object(ShapeSpec::Box {
        size: [2.0, 1.0, 0.3],
    });
    let mut env = env_with(cfg, obj);
    let mut state = env.state().clone();
    state.angular_velocity = [2.0, -3.0, 4.0];
    env.set_state(state);
    let e0 = env.kinetic_energy();
    for _ in 0..50 {
        env.apply_torque([0.0; 3]);
    }
    let rel = (env.kinetic_energy() - e0).abs() / e0;
    assert!(rel < 1e-3, "relative drift {rel}");
}

#[test]
fn damping_saturates_at_torque_over_c() {
    let obj = cube();
    let mut env = env_with(EnvConfig::default(), obj);
    for _ in 0..100 {
        env.apply_torque([0.0, 0.0, 0.002]);
    }
    let w = env.state().angular_velocity[2];
    assert!((w - 0.002 / 0.001).abs() < 1e-6, "{w}");
}

#[test]
fn reward_thresholds() {
    let id = UnitQuaternion::IDENTITY;
    assert_eq!(compute_reward(&id, &id), 1.0);
    assert_eq!(compute_reward(&id, &UnitQuaternion::about_z(0.099)), 1.0);
    assert_eq!(compute_reward(&id, &UnitQuaternion::about_z(0.101)), 0.0);
    let q = UnitQuaternion::about_z(1.3);
    assert_eq!(compute_reward(&q, &q.negated()), 1.0);
}

#[test]
fn torque_map_is_full_rank_and_clamped() {
    let m = TorqueMap::seeded(0, 0.05);
    assert!(m.gram_condition() < 10.0);
    let t = m.torque(&[1.0; ACTION_DIM], 0.05);
    assert!(t.iter().all(|v| v.abs() <= 0.05));
    assert_eq!(m, TorqueMap::seeded(0, 0.05));
    assert_ne!(m, TorqueMap::seeded(1, 0.05));
}

#[test]
fn clouds_follow_mode_and_orientation() {
    let mut r = rng(4);
    let mut vanilla = env_with(EnvConfig::default(), cube());
    assert!(vanilla.reset(&mut r).clouds.is_none());

    let cfg = EnvConfig {
        include_cloud: true,
        goal_is_initial: true,
        cloud_points: 32,
        ..EnvConfig::default()
    };
    let mut env = env_with(cfg, cube());
    let o1 = env.reset(&mut r);
    let c1 = o1.clouds.clone().unwrap();
    assert_eq!(c1.current, c1.goal);
    assert_eq!(c1.current.len(), 32);
    let o2 = env.step(&[0.0; ACTION_DIM], &mut r).unwrap().observation;
    let c2 = o2.clouds.unwrap();
    assert_ne!(c1.current.points, c2.current.points);
    let aabb = env.object().mesh.aabb();
    let rot = env.state().orientation.to_matrix().transpose();
    for p in &c2.current.points {
        assert!(aabb.contains(&rot.apply(p), 1e-9));
    }
    // regenerate from the stored seed
    let again = cloud_pair(env.object(), o1.cloud_seed, 32, &o1.achieved, &o1.goal);
    assert_eq!(again, c1);
}

#[test]
fn observation_layout() {
    let mut env = env_with(EnvConfig::default(), cube());
    let mut r = rng(5);
    env.reset(&mut r);
    let o = env.step(&[0.5; ACTION_DIM], &mut r).unwrap().observation;
    let f = o.flat();
    assert_eq!(f.len(), 23);
    let q = &f[PROPRIO_DIM + 3..PROPRIO_DIM + 7];
    assert!(q[0] >= 0.0);
    let g = &f[PROPRIO_DIM + OBJECT_STATE_DIM..];
    assert!((dot3(&[g[1], g[2], g[3]], &[g[1], g[2], g[3]]) + g[0] * g[0] - 1.0).abs() < 1e-12);
    assert_eq!(&f[PROPRIO_DIM + 7..PROPRIO_DIM + 10], &[0.0; 3]);
    assert!(o.proprio.iter().any(|v| *v != 0.0));
}

#[test]
fn geometry_changes_the_trajectory() {
    let slab = object(ShapeSpec::Box {
        size: [2.0, 1.0, 0.3],
    });
    let rod = object(ShapeSpec::Box {
        size: [3.0, 0.5, 0.5],
    });
    let ratio = (0..3)
        .map(|k| (slab.inertia[k][k] / rod.inertia[k][k]).max(rod.inertia[k][k] / slab.inertia[k][k]))
        .fold(0.0, f64::max);
    assert!(ratio >= 3.0, "inertia ratio {ratio}");
    let mut r = rng(6);
    // ten random actions, each held for five steps
    let held: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..ACTION_DIM).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let actions: Vec<Vec<f64>> = (0..50).map(|t| held[t / 5].clone()).collect();
    let mut finals = Vec::new();
    for obj in [slab, rod] {
        let mut env = env_with(EnvConfig::default(), obj);
        let mut r = rng(7);
        for a in &actions {
            env.step(a, &mut r).unwrap();
        }
        finals.push(env.state().orientation);
    }
    let d = geodesic_angle(&finals[0], &finals[1]);
    assert!(d >= 0.1, "terminal difference {d}");
}

#[test]
fn replaying_a_log_is_bit_exact() {
    let mut env = env_with(EnvConfig::default(), cube());
    let mut r = rng(8);
    env.reset(&mut r);
    let start = env.state().clone();
    let mut lines = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..50 {
        let a: Vec<f64> = (0..ACTION_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
        let o = env.step(&a, &mut r).unwrap();
        lines.push(EpisodeLogLine {
            step: env.state().step,
            action: a.clone(),
            orientation: env.state().orientation.to_array(),
            reward: o.reward,
        });
        actions.push(a);
    }
    let mut buf = Vec::new();
    write_episode_log(&mut buf, &lines).unwrap();
    let parsed = read_episode_log(std::str::from_utf8(&buf).unwrap()).unwrap();
    let logged: Vec<Vec<f64>> = parsed.iter().map(|l| l.action.clone()).collect();
    assert_eq!(logged, actions);
    let replayed = replay_actions(&mut env, start, &logged).unwrap();
    for (a, b) in replayed.iter().zip(&lines) {
        assert_eq!(a.orientation, b.orientation);
        assert_eq!(a.reward, b.reward);
    }
}

#[test]
fn registry_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<_> = preset("basic4")
        .unwrap()
        .into_iter()
        .map(|(n, s)| (n, crate::mesh::procedural_object(&s).unwrap(), Some(s)))
        .collect();
    let reg = ObjectRegistry::write_objects(dir.path(), &items, 0.2).unwrap();
    assert_eq!(reg.objects.len(), 4);
    let objs = ObjectRegistry::load_objects(&dir.path().join("registry.json")).unwrap();
    assert_eq!(objs.len(), 4);
    for (i, o) in objs.iter().enumerate() {
        assert_eq!(o.id, i);
        let ext = o.mesh.aabb().extents();
        assert!(ext.iter().all(|e| *e <= LONGEST_CAP + 1e-12));
        let fresh = o.mesh.inertia_tensor(0.2).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((fresh[a][b] - o.inertia[a][b]).abs() <= 1e-12 * fresh[a][a].abs());
            }
        }
    }
    let dup = ObjectRegistry {
        objects: vec![reg.objects[0].clone(), reg.objects[0].clone()],
    };
    assert!(dup.build(dir.path()).is_err());
}

#[test]
fn goal_mode_parsing() {
    assert_eq!("z-axis".parse::<GoalMode>().unwrap(), GoalMode::ZAxis);
    assert_eq!("so3".parse::<GoalMode>().unwrap(), GoalMode::So3);
    assert!("xy".parse::<GoalMode>().is_err());
    assert_eq!(serde_json::to_string(&GoalMode::ZAxis).unwrap(), "\"z-axis\"");
}
