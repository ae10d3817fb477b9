//! Band constraint residuals and the penalized objective.

use super::{ObstacleSet, TebBand, TebConfig};
use crate::geometry::{normalize_angle, Pose2};

/// Equality penalty `σ·x²`.
pub fn phi(x: f64, sigma: f64) -> f64 {
    sigma * x * x
}

/// One-sided inequality penalty `σ·min(0, x)²`; zero while `x ≥ 0`.
pub fn chi(x: f64, sigma: f64) -> f64 {
    let m = x.min(0.0);
    sigma * m * m
}

pub(crate) type Raw = [f64; 3];

pub(crate) fn raw(p: &Pose2) -> Raw {
    [p.x, p.y, p.beta]
}

pub(crate) fn raw_kinematic(a: &Raw, b: &Raw) -> f64 {
    let (s0, c0) = a[2].sin_cos();
    let (s1, c1) = b[2].sin_cos();
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (c0 + c1) * dy - (s0 + s1) * dx
}

/// Smooth direction sign `κu / (1 + |κu|)` with `u = ⟨q, d⟩`.
pub(crate) fn direction_sign(a: &Raw, b: &Raw, kappa: f64) -> f64 {
    let (s, c) = a[2].sin_cos();
    let u = kappa * (c * (b[0] - a[0]) + s * (b[1] - a[1]));
    u / (1.0 + u.abs())
}

pub(crate) fn raw_velocity(a: &Raw, b: &Raw, dt: f64, kappa: f64) -> (f64, f64) {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let v = len * direction_sign(a, b, kappa) / dt;
    let w = normalize_angle(b[2] - a[2]) / dt;
    (v, w)
}

pub(crate) fn raw_acceleration(a: &Raw, b: &Raw, c: &Raw, dt0: f64, dt1: f64, kappa: f64) -> (f64, f64) {
    let (v0, w0) = raw_velocity(a, b, dt0, kappa);
    let (v1, w1) = raw_velocity(b, c, dt1, kappa);
    let s = dt0 + dt1;
    (2.0 * (v1 - v0) / s, 2.0 * (w1 - w0) / s)
}

pub(crate) fn raw_goal_acceleration(a: &Raw, b: &Raw, dt: f64, v_end: f64, kappa: f64) -> (f64, f64) {
    let (v, w) = raw_velocity(a, b, dt, kappa);
    ((v_end - v) / dt, -w / dt)
}

/// Cross product `(q_k + q_{k+1}) × d_{k,k+1}`; zero when both poses lie on a
/// common arc. Only the z component can be non-zero for planar poses.
pub fn nonholonomic_residual(a: &Pose2, b: &Pose2) -> [f64; 3] {
    [0.0, 0.0, raw_kinematic(&raw(a), &raw(b))]
}

/// Linear and angular velocity of the segment `a → b` traversed in `dt`.
/// The linear speed is signed by the smooth heading/displacement alignment.
pub fn velocity(a: &Pose2, b: &Pose2, dt: f64, kappa: f64) -> (f64, f64) {
    raw_velocity(&raw(a), &raw(b), dt, kappa)
}

/// Linear and angular acceleration over two consecutive segments.
pub fn acceleration(a: &Pose2, b: &Pose2, c: &Pose2, dt0: f64, dt1: f64, kappa: f64) -> (f64, f64) {
    raw_acceleration(&raw(a), &raw(b), &raw(c), dt0, dt1, kappa)
}

/// Constraint values; each inequality entry must be ≥ 0 to be satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle {
    /// Kinematic residual per segment.
    pub h: Vec<[f64; 3]>,
    /// `(v_max − |v|, ω_max − |ω|)` per segment.
    pub velocity: Vec<[f64; 2]>,
    /// `(a_max − |a|, ω̇_max − |ω̇|)` per consecutive segment pair.
    pub acceleration: Vec<[f64; 2]>,
    /// `ρ − ρ_min` for each pose except the last, against every obstacle.
    pub obstacle: Vec<Vec<f64>>,
    /// Deceleration into the final velocity, when the band has one.
    pub goal_acceleration: Option<[f64; 2]>,
}

pub fn constraint_residuals(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> ResidualBundle {
    let p: Vec<Raw> = band.poses.iter().map(raw).collect();
    let dt = &band.intervals;
    let n = p.len();
    let h = (0..n - 1).map(|k| [0.0, 0.0, raw_kinematic(&p[k], &p[k + 1])]).collect();
    let velocity = (0..n - 1)
        .map(|k| {
            let (v, w) = raw_velocity(&p[k], &p[k + 1], dt[k], cfg.kappa);
            [cfg.v_max - v.abs(), cfg.omega_max - w.abs()]
        })
        .collect();
    let acceleration = (0..n.saturating_sub(2))
        .map(|k| {
            let (a, wd) = raw_acceleration(&p[k], &p[k + 1], &p[k + 2], dt[k], dt[k + 1], cfg.kappa);
            [cfg.acc_max - a.abs(), cfg.omega_dot_max - wd.abs()]
        })
        .collect();
    let obstacle = (0..n - 1)
        .map(|k| {
            obstacles
                .obstacles
                .iter()
                .map(|o| o.distance([p[k][0], p[k][1]]) - cfg.robot_radius - cfg.min_obstacle_dist)
                .collect()
        })
        .collect();
    let goal_acceleration = band.final_velocity.map(|v_end| {
        let (a, wd) = raw_goal_acceleration(&p[n - 2], &p[n - 1], dt[n - 2], v_end, cfg.kappa);
        [cfg.acc_max - a.abs(), cfg.omega_dot_max - wd.abs()]
    });
    ResidualBundle {
        h,
        velocity,
        acceleration,
        obstacle,
        goal_acceleration,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyTerms {
    pub kinematic: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub obstacle: f64,
    pub goal_acceleration: f64,
}

impl PenaltyTerms {
    pub fn total(&self) -> f64 {
        self.kinematic + self.velocity + self.acceleration + self.obstacle + self.goal_acceleration
    }
}

pub fn penalty(bundle: &ResidualBundle, cfg: &TebConfig) -> PenaltyTerms {
    let pair = |r: &[f64; 2], s: f64| chi(r[0], s) + chi(r[1], s);
    PenaltyTerms {
        kinematic: bundle.h.iter().map(|h| h.iter().map(|c| phi(*c, cfg.weight_kinematics)).sum::<f64>()).sum(),
        velocity: bundle.velocity.iter().map(|r| pair(r, cfg.weight_velocity)).sum(),
        acceleration: bundle.acceleration.iter().map(|r| pair(r, cfg.weight_acceleration)).sum(),
        obstacle: bundle
            .obstacle
            .iter()
            .flatten()
            .map(|o| chi(*o, cfg.weight_obstacle))
            .sum(),
        goal_acceleration: bundle
            .goal_acceleration
            .as_ref()
            .map_or(0.0, |r| pair(r, cfg.weight_acceleration)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    /// `Σ ΔT_k²`.
    pub time: f64,
    pub penalties: PenaltyTerms,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.time + self.penalties.total()
    }
}

pub fn objective_terms(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> ObjectiveTerms {
    ObjectiveTerms {
        time: band.intervals.iter().map(|t| t * t).sum(),
        penalties: penalty(&constraint_residuals(band, cfg, obstacles), cfg),
    }
}

/// Penalized objective: squared time plus all constraint penalties.
pub fn objective(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> f64 {
    objective_terms(band, cfg, obstacles).total()
}
