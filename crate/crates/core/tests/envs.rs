use std::sync::Arc;

use featurevo::envs::conformance::{run_suite, ConformanceOptions};
use featurevo::envs::{
    default_track, EchoConfig, EchoEnv, EnvError, Environment, LidarRacecar, Pose, RacecarConfig, SwingUp, SwingUpConfig, Track,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_ray(track: &Track, origin: [f64; 2], angle: f64, range: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut best = range;
    for (a, b) in track.boundary_segments() {
        // origin + t d = a + u (b - a)
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let det = dx * (-ey) - dy * (-ex);
        if det.abs() < 1e-14 {
            continue;
        }
        let (rx, ry) = (a[0] - origin[0], a[1] - origin[1]);
        let t = (rx * (-ey) - ry * (-ex)) / det;
        let u = (dx * ry - dy * rx) / det;
        if t >= 0.0 && (0.0..=1.0).contains(&u) && t < best {
            best = t;
        }
    }
    best / range
}

fn car(seed: u64) -> LidarRacecar {
    LidarRacecar::new(RacecarConfig::default(), Arc::new(default_track(seed).unwrap())).unwrap()
}

#[test]
fn raycast_matches_all_segment_oracle() {
    let track = default_track(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let total = track.centerline_length();
    let mut checked = 0;
    while checked < 200 {
        let (p, t) = track.point_at(rng.gen_range(0.0..total));
        let lat = rng.gen_range(-0.7..0.7);
        let origin = [p[0] - lat * t[1], p[1] + lat * t[0]];
        if track.sector_index(origin).is_none() {
            continue;
        }
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        for i in 0..30 {
            let a = heading + (-135.0 + 270.0 * i as f64 / 29.0f64).to_radians();
            let got = track.raycast(origin, a, 5.0);
            let want = brute_force_ray(&track, origin, a, 5.0);
            assert!((got - want).abs() < 1e-9, "pose {origin:?} ray {i}: {got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
        checked += 1;
    }
}

fn straight_corridor(width: f64) -> Track {
    // Long thin stadium loop; its straights approximate an infinite corridor.
    let mut center = Vec::new();
    let (half_len, radius) = (60.0, 10.0);
    for i in 0..=600 {
        center.push([-half_len + 2.0 * half_len * i as f64 / 600.0, -radius]);
    }
    for i in 1..200 {
        let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 200.0;
        center.push([half_len + radius * a.cos(), radius * a.sin()]);
    }
    for i in 0..=600 {
        center.push([half_len - 2.0 * half_len * i as f64 / 600.0, radius]);
    }
    for i in 1..200 {
        let a = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 200.0;
        center.push([-half_len + radius * a.cos(), radius * a.sin()]);
    }
    Track::from_centerline(center, vec![0, 300, 900, 1300], width, 5.0).unwrap()
}

#[test]
fn perpendicular_and_parallel_rays() {
    let track = straight_corridor(1.5);
    let origin = [0.0, -10.0 + 0.25];
    // wall at y = -10 + 0.75
    let up = track.raycast(origin, std::f64::consts::FRAC_PI_2, 5.0);
    assert!((up - 0.5 / 5.0).abs() < 1e-12, "{up}");
    let down = track.raycast(origin, -std::f64::consts::FRAC_PI_2, 5.0);
    assert!((down - 1.0 / 5.0).abs() < 1e-12, "{down}");
    assert_eq!(track.raycast(origin, 0.0, 5.0), 1.0);
    assert_eq!(track.raycast(origin, std::f64::consts::PI, 5.0), 1.0);
}

#[test]
fn centerline_sweep_visits_sectors_in_order() {
    let track = default_track(0).unwrap();
    let total = track.centerline_length();
    let mut seq = vec![];
    for k in 0..=20_000 {
        let (p, _) = track.point_at(total * k as f64 / 20_000.0 + 1e-9);
        let s = track.sector_index(p).expect("centerline inside corridor");
        if seq.last() != Some(&s) {
            seq.push(s);
        }
    }
    let mut expected: Vec<usize> = (0..110).collect();
    expected.push(0);
    assert_eq!(seq, expected);
}

#[test]
fn start_poses_inside_jitter_box() {
    let mut env = car(0);
    let track = env.track().clone();
    let s0 = 0.25 * track.sector_lengths()[0];
    let (p, t) = track.point_at(s0);
    let base_heading = t[1].atan2(t[0]);
    for seed in 0..100 {
        env.reset(seed).unwrap();
        let pose = env.pose();
        let (dx, dy) = (pose.x - p[0], pose.y - p[1]);
        let along = dx * t[0] + dy * t[1];
        let lateral = -dx * t[1] + dy * t[0];
        assert!(along.abs() < 1e-9);
        assert!(lateral.abs() <= 0.2 + 1e-12);
        assert!((pose.heading - base_heading).abs() <= 0.1 + 1e-12);
        assert_eq!(env.sector(), 0);
        assert_eq!(env.speed(), 0.0);
    }
}

#[test]
fn crossing_into_next_sector_scores_one() {
    let mut env = car(1);
    env.reset(0).unwrap();
    let track = env.track().clone();
    let l0 = track.sector_lengths()[0];
    let (p, t) = track.point_at(l0 - 0.05);
    env.set_state(Pose { x: p[0], y: p[1], heading: t[1].atan2(t[0]) }, 2.0).unwrap();
    let tr = env.step(&[0.0, 0.0]).unwrap();
    assert_eq!(tr.info.sector, Some(1));
    assert_eq!(tr.reward, 1.0);
    // Backing into sector 0 is impossible (speed >= 0), but re-entering the
    // same sector scores nothing.
    let tr = env.step(&[0.0, 0.0]).unwrap();
    assert_eq!(tr.reward, 0.0);
}

/// Pure-pursuit driver along the centerline.
fn pursuit(env: &LidarRacecar) -> [f64; 2] {
    let track = env.track();
    let pose = env.pose();
    let total = track.centerline_length();
    let center = track.centerline();
    let (mut best, mut best_d) = (0, f64::INFINITY);
    for (j, c) in center.iter().enumerate() {
        let d = (c[0] - pose.x).powi(2) + (c[1] - pose.y).powi(2);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    let s_here = total * best as f64 / center.len() as f64;
    let (target, _) = track.point_at(s_here + 0.8);
    let ang = (target[1] - pose.y).atan2(target[0] - pose.x) - pose.heading;
    let ang = ang.sin().atan2(ang.cos());
    let steer = (2.0 * 0.33 * ang.sin() / 0.8).atan() / 0.4;
    let accel = if env.speed() < 1.5 { 1.0 } else { 0.0 };
    [steer.clamp(-1.0, 1.0), accel]
}

#[test]
fn full_lap_adds_exactly_110() {
    let mut env = car(2);
    env.reset(5).unwrap();
    let mut total = 0.0;
    let mut collisions = 0;
    let mut steps = 0;
    while total < 110.0 && steps < 5_000 {
        let a = pursuit(&env);
        let t = env.step(&a).unwrap();
        collisions += t.info.collided as usize;
        total += t.reward;
        steps += 1;
    }
    assert_eq!(collisions, 0);
    assert_eq!(total, 110.0);
    assert_eq!(env.sector(), 0);
    assert_eq!(env.reward_so_far(), 110.0);
}

#[test]
fn wall_contact_stops_the_car() {
    let mut env = car(0);
    env.reset(0).unwrap();
    let mut hit = false;
    for _ in 0..400 {
        let t = match env.step(&[1.0, 1.0]) {
            Ok(t) => t,
            Err(EnvError::EpisodeDone) => break,
            Err(e) => panic!("{e}"),
        };
        if t.info.collided {
            hit = true;
            assert_eq!(env.speed(), 0.0);
            assert!(env.track().sector_index([env.pose().x, env.pose().y]).is_some());
        }
        assert!(t.obs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(hit);
}

#[test]
fn builtin_envs_pass_conformance() {
    let track = Arc::new(default_track(0).unwrap());
    let cfg = RacecarConfig { max_steps: 2_000, ..RacecarConfig::default() };
    let report = run_suite(
        || Ok(Box::new(LidarRacecar::new(cfg.clone(), track.clone())?) as Box<dyn Environment>),
        &ConformanceOptions { sector_count: Some(110), ..ConformanceOptions::default() },
    )
    .unwrap();
    assert!(report.clamped_steps > 0);
    run_suite(|| Ok(Box::new(SwingUp::new(SwingUpConfig::default())?) as Box<dyn Environment>), &ConformanceOptions::default()).unwrap();
    run_suite(|| Ok(Box::new(EchoEnv::new(EchoConfig::default())?) as Box<dyn Environment>), &ConformanceOptions::default()).unwrap();
}

#[test]
fn noisy_lidar_still_bounded() {
    let cfg = RacecarConfig { lidar_noise: 0.3, max_steps: 300, ..RacecarConfig::default() };
    let track = Arc::new(default_track(0).unwrap());
    run_suite(
        || Ok(Box::new(LidarRacecar::new(cfg.clone(), track.clone())?) as Box<dyn Environment>),
        &ConformanceOptions { sector_count: Some(110), ..ConformanceOptions::default() },
    )
    .unwrap();
}

#[test]
fn swingup_energy_bounded() {
    let cfg = SwingUpConfig::default();
    let mut env = SwingUp::new(cfg.clone()).unwrap();
    env.reset(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let t = env.step(&[rng.gen_range(-1.0..1.0)]).unwrap();
        let (theta, omega) = env.state();
        assert!(omega.abs() <= cfg.max_speed);
        let energy = 0.5 * omega * omega + cfg.gravity * (1.0 - theta.cos());
        assert!(energy <= 0.5 * cfg.max_speed.powi(2) + 2.0 * cfg.gravity + 1e-9);
        assert!(t.obs.iter().all(|v| v.abs() <= 1.0));
        assert!((0.0..=1.0).contains(&t.reward));
    }
}

#[test]
fn track_text_export_import() {
    let t = default_track(6).unwrap();
    let text = t.to_text();
    assert!(text.starts_with("# featurevo track v1\n"));
    let back = Track::from_text(&text).unwrap();
    assert_eq!(back.left_boundary(), t.left_boundary());
    assert_eq!(back.sector_starts(), t.sector_starts());
}
