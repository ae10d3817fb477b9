mod common;

use common::teb::*;
use navstack::teb::{extract_command, objective, optimize, initialize_band, BandWindow, Obstacle, ObstacleSet, TebBand, TebConfig};
use navstack::Pose2;

#[test]
fn closed_form_gradients_match_finite_differences() {
    let cfg = TebConfig::default();
    for seed in 0..50 {
        let (band, obstacles) = random_band(seed);
        let err = gradient_errors(&band, &cfg, &obstacles);
        for (t, e) in err.iter().enumerate() {
            assert!(*e < 1e-4, "seed {seed}: {} gradient error {e}", TERMS[t]);
        }
    }
}

#[test]
fn accepted_steps_never_raise_the_objective() {
    let cfg = TebConfig {
        record_trace: true,
        ..TebConfig::default()
    };
    for seed in 0..30 {
        let (band, obstacles) = random_band(seed);
        let rep = optimize(&band, &cfg, &obstacles).unwrap();
        for run in &rep.trace {
            assert!(run.windows(2).all(|w| w[1] <= w[0] + 1e-12), "seed {seed}: {run:?}");
        }
        assert!(rep.objective <= rep.initial_objective + 1e-12);
        assert_eq!(rep.band.poses[0], band.poses[0]);
        assert_eq!(rep.band.poses.last(), band.poses.last());
    }
}

#[test]
fn free_space_band_is_near_minimum_time() {
    let cfg = TebConfig::default();
    let window = BandWindow::new([-2.0, -2.0], [2.0, 2.0]);
    let path: Vec<[f64; 2]> = (0..=40).map(|i| [i as f64 * 0.05 - 1.0, 0.0]).collect();
    let band = initialize_band(&path, Pose2::new(-1.0, 0.0, 0.0), Pose2::new(1.0, 0.0, 0.0), &window, &cfg).unwrap();
    let mut band = band;
    // Timing bound for an unconstrained end velocity.
    band.final_velocity = None;
    let out = converge(&band, &cfg, &ObstacleSet::default(), 50);
    let bound = 2.0 / cfg.v_max;
    assert!((out.total_time() - bound).abs() / bound < 0.05, "T = {}", out.total_time());
    let pen = objective(&out, &cfg, &ObstacleSet::default()) - out.intervals.iter().map(|t| t * t).sum::<f64>();
    assert!(pen < 1e-6, "penalty {pen}");
    let (v, a) = worst_limit_violation(&out, &cfg);
    assert!(v <= 1e-3 && a <= 1e-3, "{v} {a}");
}

#[test]
fn converged_bands_are_feasible_near_obstacles() {
    let cfg = TebConfig::default();
    for (i, obstacle) in [
        Obstacle::Point([1.0, 0.05]),
        Obstacle::Point([0.8, -0.2]),
        Obstacle::Circle { center: [1.2, 0.35], radius: 0.15 },
        Obstacle::Segment { a: [0.9, 0.3], b: [1.3, 0.45] },
    ]
    .into_iter()
    .enumerate()
    {
        let obstacles = ObstacleSet::new(vec![obstacle]).unwrap();
        let out = converge(&straight_band(9, 0.25, 0.5), &cfg, &obstacles, 100);
        let c = min_clearance(&out, &cfg, &obstacles);
        assert!(c >= cfg.min_obstacle_dist - 0.02, "case {i}: clearance {c}");
        let (v, a) = worst_limit_violation(&out, &cfg);
        assert!(v <= 1e-3 && a <= 1e-3, "case {i}: {v} {a}");
    }
}

#[test]
fn optimal_band_is_a_fixed_point() {
    let cfg = TebConfig::default();
    let obstacles = ObstacleSet::default();
    let out = converge(&straight_band(9, 0.25, 0.5), &cfg, &obstacles, 50);
    let again = optimize(&out, &cfg, &obstacles).unwrap();
    assert!((again.objective - again.initial_objective).abs() < 1e-9);
}

#[test]
fn obstacle_ahead_makes_the_band_reverse() {
    let cfg = TebConfig::default();
    // Robot facing +x with an obstacle right in front; the band must back off.
    let band = TebBand::new(
        vec![Pose2::new(0.0, 0.0, 0.0), Pose2::new(-0.25, 0.0, 0.0), Pose2::new(-0.5, 0.0, 0.0)],
        vec![0.5, 0.5],
    )
    .unwrap();
    let obstacles = ObstacleSet::from_points([[0.35, 0.0]]);
    let out = optimize(&band, &cfg, &obstacles).unwrap().band;
    let cmd = extract_command(&out, &cfg, 0.0, 0.0, 0.1);
    assert!(cmd.v < 0.0, "{cmd:?}");
}

#[test]
fn non_finite_intervals_are_repaired() {
    let cfg = TebConfig::default();
    let mut band = straight_band(3, 0.0, 0.5);
    band.intervals[0] = 1e-300;
    let rep = optimize(&band, &cfg, &ObstacleSet::default()).unwrap();
    assert!(rep.band.intervals.iter().all(|dt| *dt >= cfg.dt_min));
}
