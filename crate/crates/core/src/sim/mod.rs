//! Deterministic world simulator: unicycle robot, static and moving
//! obstacles, ray-cast LiDAR and depth cameras, collision checks.

mod scenario;
mod sensors;

pub use scenario::{GoalEntry, Scenario, DEFAULT_OBSTACLE_HEIGHT, DEFAULT_OBSTACLE_SPEED};
pub use sensors::{simulate_depth, simulate_lidar, DepthCameraSpec, LidarSpec, RangeNoise, SensorSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};

pub const ROBOT_RADIUS: f64 = 0.25;

/// Ground-truth robot. The commanded pair is saturated to the limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pose: Pose2,
    pub v: f64,
    pub omega: f64,
    pub radius: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl RobotState {
    pub fn new(pose: Pose2) -> Self {
        Self {
            pose,
            v: 0.0,
            omega: 0.0,
            radius: ROBOT_RADIUS,
            v_max: 1.0,
            omega_max: 1.5,
        }
    }
}

/// Exact arc integration of the unicycle over `dt` with the saturated command.
pub fn step_robot(state: &RobotState, v: f64, omega: f64, dt: f64) -> Result<RobotState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let v = if v.is_finite() { v.clamp(-state.v_max, state.v_max) } else { 0.0 };
    let omega = if omega.is_finite() {
        omega.clamp(-state.omega_max, state.omega_max)
    } else {
        0.0
    };
    let Pose2 { x, y, beta } = state.pose;
    let pose = if omega.abs() < 1e-9 {
        Pose2::new(x + v * dt * beta.cos(), y + v * dt * beta.sin(), beta)
    } else {
        let r = v / omega;
        let b1 = beta + omega * dt;
        Pose2::new(x + r * (b1.sin() - beta.sin()), y + r * (beta.cos() - b1.cos()), normalize_angle(b1))
    };
    Ok(RobotState { pose, v, omega, ..*state })
}

/// Obstacle footprint; extruded vertically from the ground to `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f64 },
    /// Axis-aligned box, `w` along x and `h` along y.
    Box { w: f64, h: f64 },
}

impl Shape {
    /// Planar distance from `p` to the footprint centred at `c`; 0 inside.
    pub fn distance(&self, c: [f64; 2], p: [f64; 2]) -> f64 {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        match *self {
            Shape::Circle { radius } => (dx.hypot(dy) - radius).max(0.0),
            Shape::Box { w, h } => {
                let ex = (dx.abs() - w / 2.0).max(0.0);
                let ey = (dy.abs() - h / 2.0).max(0.0);
                ex.hypot(ey)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Circle { radius } => radius > 0.0,
            Shape::Box { w, h } => w > 0.0 && h > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("obstacle dimensions must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static { at: [f64; 2] },
    /// Moves along the polyline at `speed` from `start_time`, resting at the end.
    Waypoints {
        points: Vec<[f64; 2]>,
        speed: f64,
        #[serde(default)]
        start_time: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub id: String,
    pub shape: Shape,
    pub height: f64,
    pub trajectory: Trajectory,
}

impl ObstacleSpec {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.height > 0.0) {
            return Err(Error::InvalidArgument(format!("obstacle `{}`: height must be positive", self.id)));
        }
        if let Trajectory::Waypoints { points, speed, start_time } = &self.trajectory {
            if points.len() < 2 {
                return Err(Error::InvalidArgument(format!("obstacle `{}`: needs ≥ 2 waypoints", self.id)));
            }
            if !(*speed >= 0.0) || !start_time.is_finite() {
                return Err(Error::InvalidArgument(format!("obstacle `{}`: speed must be ≥ 0", self.id)));
            }
        }
        Ok(())
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self.trajectory, Trajectory::Waypoints { .. })
    }

    /// Centre at simulated time `t`.
    pub fn position(&self, t: f64) -> [f64; 2] {
        match &self.trajectory {
            Trajectory::Static { at } => *at,
            Trajectory::Waypoints { points, speed, start_time } => {
                let mut s = speed * (t - start_time).max(0.0);
                for w in points.windows(2) {
                    let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                    if s <= len && len > 0.0 {
                        let f = s / len;
                        return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
                    }
                    s -= len;
                }
                *points.last().expect("validated waypoints")
            }
        }
    }
}

/// An obstacle frozen at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObstacle {
    pub id: String,
    pub shape: Shape,
    pub height: f64,
    pub center: [f64; 2],
}

impl PlacedObstacle {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.shape.distance(self.center, p)
    }
}

pub fn advance_obstacles(specs: &[ObstacleSpec], t: f64) -> Vec<PlacedObstacle> {
    specs
        .iter()
        .map(|s| PlacedObstacle {
            id: s.id.clone(),
            shape: s.shape,
            height: s.height,
            center: s.position(t),
        })
        .collect()
}

/// Strict: touching at exactly the robot radius is not a collision.
pub fn check_collision(pose: &Pose2, radius: f64, obstacles: &[PlacedObstacle]) -> bool {
    obstacles.iter().any(|o| o.distance(pose.position()) < radius)
}

/// Obstacles plus simulated time; sensors read a frozen copy.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub obstacles: Vec<ObstacleSpec>,
    pub time: f64,
}

impl World {
    pub fn new(obstacles: Vec<ObstacleSpec>) -> Result<Self> {
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self { obstacles, time: 0.0 })
    }

    pub fn snapshot(&self) -> Vec<PlacedObstacle> {
        advance_obstacles(&self.obstacles, self.time)
    }

    /// Replaces the obstacle with the same id, or adds it.
    pub fn upsert(&mut self, spec: ObstacleSpec) -> Result<()> {
        spec.validate()?;
        match self.obstacles.iter_mut().find(|o| o.id == spec.id) {
            Some(o) => *o = spec,
            None => self.obstacles.push(spec),
        }
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> bool {
        let before = self.obstacles.len();
        self.obstacles.retain(|o| o.id != id);
        self.obstacles.len() != before
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn step_examples() {
        let s = RobotState::new(Pose2::default());
        let a = step_robot(&s, 1.0, 0.0, 0.1).unwrap();
        assert!((a.pose.x - 0.1).abs() < 1e-15 && a.pose.y == 0.0);
        let b = step_robot(&s, 1.0, 1.0, FRAC_PI_2).unwrap();
        assert!((b.pose.x - 1.0).abs() < 1e-12 && (b.pose.y - 1.0).abs() < 1e-12);
        assert!((b.pose.beta - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(step_robot(&s, 0.0, 0.0, 1.0).unwrap().pose, s.pose);
        assert!(step_robot(&s, 1.0, 0.0, 0.0).is_err());
        let c = step_robot(&s, 5.0, -9.0, 0.1).unwrap();
        assert_eq!((c.v, c.omega), (1.0, -1.5));
    }

    #[test]
    fn waypoint_motion() {
        let spec = ObstacleSpec {
            id: "m".into(),
            shape: Shape::Circle { radius: 0.2 },
            height: 1.0,
            trajectory: Trajectory::Waypoints {
                points: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0]],
                speed: 0.5,
                start_time: 0.0,
            },
        };
        assert_eq!(spec.position(2.0), [1.0, 0.0]);
        assert_eq!(spec.position(5.0), [2.0, 0.5]);
        assert_eq!(spec.position(100.0), [2.0, 1.0]);
        let fixed = ObstacleSpec {
            trajectory: Trajectory::Static { at: [1.0, 2.0] },
            ..spec.clone()
        };
        assert_eq!(fixed.position(0.0), fixed.position(50.0));
    }

    #[test]
    fn collision_boundary() {
        let point = |x: f64| PlacedObstacle {
            id: "p".into(),
            shape: Shape::Circle { radius: 1e-300 },
            height: 1.0,
            center: [x, 0.0],
        };
        let p = Pose2::default();
        assert!(check_collision(&p, 0.25, &[point(0.2)]));
        assert!(!check_collision(&p, 0.25, &[point(0.3)]));
        assert!(!check_collision(&p, 0.25, &[point(0.25)]));
        let wall = PlacedObstacle {
            id: "b".into(),
            shape: Shape::Box { w: 1.0, h: 1.0 },
            height: 1.0,
            center: [0.7, 0.0],
        };
        assert!(check_collision(&p, 0.25, &[wall.clone()]));
        assert!(!check_collision(&Pose2::new(-0.1, 0.0, 0.0), 0.25, &[wall]));
    }
}
