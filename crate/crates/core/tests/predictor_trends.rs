use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thzvr_core::geometry::{los_status, Direction, Obstacle, Position3, SceneLayout};
use thzvr_core::predictors::{
    decode_users, rasterize_scene, DirectionParams, DirectionPredictor, ViewpointMode, ViewpointParams,
    ViewpointPredictor,
};

/// Runs one user's trace through the online predictor and returns the
/// squared prediction error (degrees²) of every slot.
fn online_errors(trace: &[f64], lr: f64, seed: u64) -> Vec<f64> {
    let params = ViewpointParams { lr, ..ViewpointParams::default() };
    let mut p = ViewpointPredictor::new(params, ViewpointMode::Centralized, 1, &mut ChaCha8Rng::seed_from_u64(seed));
    trace
        .iter()
        .map(|&a| {
            let e = p.predict_all().unwrap()[0] - a;
            p.observe(&[a]).unwrap();
            e * e
        })
        .collect()
}

#[test]
fn ramp_trace_beats_last_value_baseline() {
    let trace: Vec<f64> = (0..400).map(|t| -140.0 + 0.7 * t as f64).collect();
    let errs = online_errors(&trace, 0.05, 1);
    let tail = &errs[300..];
    let model = tail.iter().sum::<f64>() / tail.len() as f64;
    let baseline = 0.7 * 0.7;
    println!("ramp mse {model:.4} vs last-value {baseline:.4}");
    assert!(model < baseline);
}

#[test]
fn periodic_trace_error_trends_down() {
    let trace: Vec<f64> = (0..220).map(|t| 60.0 * (2.0 * std::f64::consts::PI * t as f64 / 40.0).sin()).collect();
    let errs = online_errors(&trace, 0.05, 2);
    // 20-slot rolling means over the first 200 slots, warm-up included
    let rolling: Vec<f64> = (20..=200).map(|end| errs[end - 20..end].iter().sum::<f64>() / 20.0).collect();
    let n = rolling.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = rolling.iter().sum::<f64>() / n;
    let slope = rolling.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum::<f64>()
        / rolling.iter().enumerate().map(|(i, _)| (i as f64 - xm).powi(2)).sum::<f64>();
    println!("rolling mse {:.3} -> {:.3}, slope {slope:.5}", rolling[0], rolling[rolling.len() - 1]);
    assert!(slope < 0.0);
    assert!(rolling[rolling.len() - 1] < rolling[0]);
}

#[test]
fn straight_line_walker_is_predicted_right() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = DirectionPredictor::new(DirectionParams::default(), 1, 20.0, 1.0, &mut rng);
    let line = |x: usize| Position3::new(x as f64, 5.0, 1.5);
    for _ in 0..150 {
        p.reset_tracks(1);
        for x in 0..20 {
            p.observe(&[line(x)], &mut rng).unwrap();
        }
    }
    let mut hits = 0;
    let mut total = 0;
    p.reset_tracks(1);
    for x in 0..19 {
        p.observe(&[line(x)], &mut rng).unwrap();
        let probs = p.predict_proba().unwrap()[0];
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        if x >= 9 {
            total += 1;
            let best = (0..4).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
            hits += usize::from(Direction::ALL[best] == Direction::Right);
        }
    }
    let acc = hits as f64 / total as f64;
    println!("straight-line accuracy {acc:.3}");
    assert!(acc > 0.95);
}

#[test]
fn rasterized_scene_preserves_blockage() {
    let layout = SceneLayout {
        width: 20.0,
        height: 3.0,
        mec: Position3::new(0.0, 0.0, 3.0),
        ris: Position3::new(10.0, 20.0, 3.0),
        obstacles: vec![
            Obstacle { x_range: [4.0, 8.0], y_range: [8.0, 12.0], height: 3.0 },
            Obstacle { x_range: [12.0, 16.0], y_range: [8.0, 12.0], height: 3.0 },
        ],
        body_radius: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut users: Vec<Position3> = Vec::new();
        while users.len() < 8 {
            let (x, y) = (rng.random_range(0..=20) as f64, rng.random_range(0..=20) as f64);
            let inside = layout.obstacles.iter().any(|o| o.contains_xy(x, y));
            let taken = users.iter().any(|u| u.x == x && u.y == y);
            if !inside && !taken && (x, y) != (0.0, 0.0) {
                users.push(Position3::new(x, y, if rng.random_bool(0.5) { 1.8 } else { 1.2 }));
            }
        }
        let img = rasterize_scene(&layout, &users, None, (1.2, 1.8));
        let (decoded, target) = decode_users(&img, (1.2, 1.8));
        assert!(target.is_none());
        assert_eq!(decoded.len(), users.len());
        let original = los_status(&layout, &users);
        let after = los_status(&layout, &decoded);
        for (u, s) in users.iter().zip(&original) {
            let j = decoded.iter().position(|d| d == u).expect("every user decodes to its own cell");
            assert_eq!(after[j], *s);
        }
    }
}
