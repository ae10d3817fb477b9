//! Timed-elastic-band local planner.
//!
//! A band is a pose sequence with a time interval between each pair. The
//! planner minimizes total squared time under soft kinematic, velocity,
//! acceleration and clearance penalties with a Levenberg–Marquardt solver,
//! holding the first and last pose fixed.

mod band;
mod constraints;
mod obstacles;
mod optimizer;

pub use band::{extract_command, initialize_band, warm_start, BandWindow, Command};
pub use constraints::{
    acceleration, chi, constraint_residuals, nonholonomic_residual, objective, objective_terms, penalty, phi, velocity,
    ObjectiveTerms,
    PenaltyTerms, ResidualBundle,
};
pub use obstacles::{Obstacle, ObstacleSet};
pub use optimizer::{optimize, penalty_gradients, resize_band, JacobianMode, OptimizeReport, PenaltyGradients};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TebConfig {
    pub v_max: f64,
    pub omega_max: f64,
    pub acc_max: f64,
    pub omega_dot_max: f64,
    /// Required clearance between the robot's safety circle and any obstacle.
    pub min_obstacle_dist: f64,
    pub robot_radius: f64,
    /// Sharpness of the smooth direction sign.
    pub kappa: f64,
    pub weight_kinematics: f64,
    pub weight_velocity: f64,
    pub weight_acceleration: f64,
    pub weight_obstacle: f64,
    /// Pose spacing used when seeding a band from a path.
    pub ref_spacing: f64,
    pub dt_ref: f64,
    pub dt_min: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_poses: usize,
    /// Obstacles farther than this from a pose's safety circle are not
    /// attached to that pose during an outer iteration.
    pub obstacle_association_dist: f64,
    pub jacobian: JacobianMode,
    /// Evaluate the full objective after every accepted solver step.
    pub record_trace: bool,
}

impl Default for TebConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.5,
            acc_max: 1.0,
            omega_dot_max: 2.0,
            min_obstacle_dist: 0.2,
            robot_radius: 0.25,
            kappa: 100.0,
            weight_kinematics: 1000.0,
            weight_velocity: 30000.0,
            weight_acceleration: 30000.0,
            weight_obstacle: 2000.0,
            ref_spacing: 0.25,
            dt_ref: 0.3,
            dt_min: 0.01,
            outer_iterations: 4,
            inner_iterations: 5,
            max_poses: 80,
            obstacle_association_dist: 1.0,
            jacobian: JacobianMode::Numeric,
            record_trace: false,
        }
    }
}

impl TebConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("acc_max", self.acc_max),
            ("omega_dot_max", self.omega_dot_max),
            ("min_obstacle_dist", self.min_obstacle_dist),
            ("robot_radius", self.robot_radius),
            ("kappa", self.kappa),
            ("ref_spacing", self.ref_spacing),
            ("dt_ref", self.dt_ref),
            ("dt_min", self.dt_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        let weights = [
            self.weight_kinematics,
            self.weight_velocity,
            self.weight_acceleration,
            self.weight_obstacle,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("penalty weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Poses `s_1..s_n` and intervals `ΔT_1..ΔT_{n−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TebBand {
    pub poses: Vec<Pose2>,
    pub intervals: Vec<f64>,
    /// Velocity the band must end with, when it ends at the goal.
    pub final_velocity: Option<f64>,
}

impl TebBand {
    pub fn new(poses: Vec<Pose2>, intervals: Vec<f64>) -> Result<Self> {
        let band = Self {
            poses,
            intervals,
            final_velocity: None,
        };
        band.validate(0.0)?;
        Ok(band)
    }

    pub fn validate(&self, dt_min: f64) -> Result<()> {
        if self.poses.len() < 2 {
            return Err(Error::InvalidArgument("a band needs at least two poses".into()));
        }
        if self.intervals.len() != self.poses.len() - 1 {
            return Err(Error::InvalidArgument("a band needs one interval per pose pair".into()));
        }
        if self.intervals.iter().any(|dt| !(*dt > 0.0) || *dt < dt_min) {
            return Err(Error::InvalidArgument("band intervals must be positive and ≥ dt_min".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn total_time(&self) -> f64 {
        self.intervals.iter().sum()
    }

    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
    }

    /// Band dump: one `k x y beta dT` line per pose; the last pose has dT 0.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, p) in self.poses.iter().enumerate() {
            let dt = self.intervals.get(k).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{k} {:.6} {:.6} {:.6} {:.6}", p.x, p.y, p.beta, dt);
        }
        out
    }
}
