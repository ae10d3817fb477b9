//! Independent checks for the band optimizer: finite-difference gradients of
//! every objective term and feasibility measurements.

use nalgebra::DVector;
use navstack::teb::{
    constraint_residuals, penalty, penalty_gradients, Obstacle, ObstacleSet, TebBand, TebConfig,
};
use navstack::Pose2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TERMS: [&str; 6] = ["time", "kinematic", "velocity", "acceleration", "obstacle", "goal_acceleration"];

/// Random band with a mix of obstacle shapes around it.
pub fn random_band(seed: u64) -> (TebBand, ObstacleSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..10);
    let mut poses = Vec::with_capacity(n);
    let (mut x, mut y, mut b) = (0.0, 0.0, rng.random_range(-3.0..3.0));
    for _ in 0..n {
        poses.push(Pose2::new(x, y, b));
        let step = rng.random_range(0.05..0.4);
        let dir: f64 = b + rng.random_range(-0.6..0.6);
        // Occasionally step backwards so reverse segments are covered.
        let sign = if rng.random_bool(0.2) { -1.0 } else { 1.0 };
        x += sign * step * dir.cos();
        y += sign * step * dir.sin();
        b += rng.random_range(-0.8..0.8);
    }
    let intervals = (0..n - 1).map(|_| rng.random_range(0.05..0.6)).collect();
    let mut band = TebBand::new(poses, intervals).unwrap();
    if rng.random_bool(0.5) {
        band.final_velocity = Some(0.0);
    }
    let near = |rng: &mut ChaCha8Rng, band: &TebBand| {
        let p = band.poses[rng.random_range(0..band.len())];
        [p.x + rng.random_range(-0.6..0.6), p.y + rng.random_range(-0.6..0.6)]
    };
    let mut obstacles = Vec::new();
    for _ in 0..rng.random_range(1..5) {
        let c = near(&mut rng, &band);
        obstacles.push(match rng.random_range(0..4) {
            0 => Obstacle::Point(c),
            1 => Obstacle::Circle {
                center: c,
                radius: rng.random_range(0.05..0.3),
            },
            2 => Obstacle::Segment {
                a: c,
                b: [c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)],
            },
            _ => {
                let h = rng.random_range(0.05..0.3);
                Obstacle::Polygon(vec![
                    [c[0] - h, c[1] - h],
                    [c[0] + h, c[1] - h],
                    [c[0] + h, c[1] + h],
                    [c[0] - h, c[1] + h],
                ])
            }
        });
    }
    (band, ObstacleSet::new(obstacles).unwrap())
}

/// Scalar value of each objective term, computed from the public residuals.
pub fn term_values(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> [f64; 6] {
    let p = penalty(&constraint_residuals(band, cfg, obstacles), cfg);
    [
        band.intervals.iter().map(|t| t * t).sum(),
        p.kinematic,
        p.velocity,
        p.acceleration,
        p.obstacle,
        p.goal_acceleration,
    ]
}

/// Band with free variable `i` (interior `[x, y, β]`, then intervals) shifted by `h`.
fn perturbed(band: &TebBand, i: usize, h: f64) -> TebBand {
    let mut out = band.clone();
    let interior = 3 * (band.len() - 2);
    if i < interior {
        let k = 1 + i / 3;
        let p = out.poses[k];
        // Bypass heading normalization so the perturbation is exact.
        match i % 3 {
            0 => out.poses[k].x = p.x + h,
            1 => out.poses[k].y = p.y + h,
            _ => out.poses[k].beta = p.beta + h,
        }
    } else {
        out.intervals[i - interior] += h;
    }
    out
}

fn fd_gradients(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet, h: f64) -> Vec<DVector<f64>> {
    let m = 3 * (band.len() - 2) + band.len() - 1;
    let mut g = vec![DVector::zeros(m); 6];
    for i in 0..m {
        let fp = term_values(&perturbed(band, i, h), cfg, obstacles);
        let fm = term_values(&perturbed(band, i, -h), cfg, obstacles);
        for t in 0..6 {
            g[t][i] = (fp[t] - fm[t]) / (2.0 * h);
        }
    }
    g
}

/// Worst relative error per term between the closed-form gradients and
/// central differences.
pub fn gradient_errors(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> [f64; 6] {
    let a = penalty_gradients(band, cfg, obstacles).unwrap();
    let analytic = [
        &a.time,
        &a.kinematic,
        &a.velocity,
        &a.acceleration,
        &a.obstacle,
        &a.goal_acceleration,
    ];
    let numeric = fd_gradients(band, cfg, obstacles, 1e-6);
    let mut out = [0.0; 6];
    for t in 0..6 {
        let scale = numeric[t].norm().max(analytic[t].norm());
        out[t] = if scale < 1e-9 {
            0.0
        } else {
            (analytic[t] - &numeric[t]).norm() / scale
        };
    }
    out
}

/// Smallest distance between any pose's safety circle and any obstacle,
/// over the poses that carry a clearance constraint.
pub fn min_clearance(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> f64 {
    band.poses[..band.len() - 1]
        .iter()
        .map(|p| obstacles.nearest_distance(p.position()) - cfg.robot_radius)
        .fold(f64::INFINITY, f64::min)
}

/// Largest violation of the velocity and acceleration limits.
pub fn worst_limit_violation(band: &TebBand, cfg: &TebConfig) -> (f64, f64) {
    let r = constraint_residuals(band, cfg, &ObstacleSet::default());
    let v = r.velocity.iter().flatten().fold(0.0f64, |m, x| m.max(-x));
    let a = r
        .acceleration
        .iter()
        .chain(r.goal_acceleration.iter())
        .flatten()
        .fold(0.0f64, |m, x| m.max(-x));
    (v, a)
}

pub fn straight_band(n: usize, spacing: f64, dt: f64) -> TebBand {
    TebBand::new(
        (0..n).map(|k| Pose2::new(k as f64 * spacing, 0.0, 0.0)).collect(),
        vec![dt; n - 1],
    )
    .unwrap()
}

/// Repeats `optimize` (as the control loop does) until the objective settles.
pub fn converge(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet, rounds: usize) -> TebBand {
    let mut b = band.clone();
    for _ in 0..rounds {
        let rep = navstack::teb::optimize(&b, cfg, obstacles).unwrap();
        let done = rep.initial_objective - rep.objective < 1e-12;
        b = rep.band;
        if done {
            break;
        }
    }
    b
}
