//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! name static
//! seed 7
//! bounds -3 -3 3 3
//! walls 2.0
//! start -2.5 -2.5 0.785
//! duration 50
//! noise 0.0
//! goal 2.5 2.5 0.785
//! goal -2.5 2.5 1.571 at 12
//! obstacle c0
//!   circle 0.15
//!   at -1.5 -1.5
//! end
//! obstacle mover
//!   box 0.5 1.0
//!   height 1.5
//!   waypoint 0 2
//!   waypoint 0 -2
//!   speed 0.4
//!   start_time 3
//! end
//! ```

use std::path::Path;

use super::{ObstacleSpec, Shape, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::Pose2;

pub const DEFAULT_OBSTACLE_HEIGHT: f64 = 2.0;
pub const DEFAULT_OBSTACLE_SPEED: f64 = 0.4;
const WALL_THICKNESS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalEntry {
    pub pose: Pose2,
    /// Simulated time at which the goal is issued.
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// `[x_min, y_min, x_max, y_max]`.
    pub bounds: [f64; 4],
    /// Height of boundary walls, if any.
    pub walls: Option<f64>,
    pub start: Pose2,
    pub duration: f64,
    pub noise: f64,
    pub goals: Vec<GoalEntry>,
    pub obstacles: Vec<ObstacleSpec>,
    /// Localize with the true pose instead of odometry (debugging aid).
    pub ground_truth: bool,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn nums(line: usize, args: &[&str], n: usize) -> Result<Vec<f64>> {
    if args.len() != n {
        return Err(err(line, format!("expected {n} numbers, got {}", args.len())));
    }
    args.iter()
        .map(|a| {
            a.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("bad number `{a}`")))
        })
        .collect()
}

#[derive(Default)]
struct Block {
    id: String,
    line: usize,
    shape: Option<Shape>,
    height: Option<f64>,
    at: Option<[f64; 2]>,
    waypoints: Vec<[f64; 2]>,
    speed: Option<f64>,
    start_time: Option<f64>,
}

impl Block {
    fn finish(self) -> Result<ObstacleSpec> {
        let line = self.line;
        let shape = self.shape.ok_or_else(|| err(line, format!("obstacle `{}` has no shape", self.id)))?;
        let trajectory = match (self.at, self.waypoints.is_empty()) {
            (Some(at), true) => Trajectory::Static { at },
            (None, false) => Trajectory::Waypoints {
                points: self.waypoints,
                speed: self.speed.unwrap_or(DEFAULT_OBSTACLE_SPEED),
                start_time: self.start_time.unwrap_or(0.0),
            },
            _ => return Err(err(line, format!("obstacle `{}` needs either `at` or waypoints", self.id))),
        };
        let spec = ObstacleSpec {
            id: self.id,
            shape,
            height: self.height.unwrap_or(DEFAULT_OBSTACLE_HEIGHT),
            trajectory,
        };
        spec.validate().map_err(|e| err(line, e.to_string()))?;
        Ok(spec)
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario {
            name: "unnamed".into(),
            seed: 0,
            bounds: [0.0; 4],
            walls: None,
            start: Pose2::default(),
            duration: 60.0,
            noise: 0.0,
            goals: Vec::new(),
            obstacles: Vec::new(),
            ground_truth: false,
        };
        let mut have_bounds = false;
        let mut block: Option<Block> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let (key, args) = (words[0], &words[1..]);
            if let Some(b) = block.as_mut() {
                match key {
                    "circle" => b.shape = Some(Shape::Circle { radius: nums(ln, args, 1)?[0] }),
                    "box" => {
                        let v = nums(ln, args, 2)?;
                        b.shape = Some(Shape::Box { w: v[0], h: v[1] });
                    }
                    "height" => b.height = Some(nums(ln, args, 1)?[0]),
                    "at" => {
                        let v = nums(ln, args, 2)?;
                        b.at = Some([v[0], v[1]]);
                    }
                    "waypoint" => {
                        let v = nums(ln, args, 2)?;
                        b.waypoints.push([v[0], v[1]]);
                    }
                    "speed" => b.speed = Some(nums(ln, args, 1)?[0]),
                    "start_time" => b.start_time = Some(nums(ln, args, 1)?[0]),
                    "end" => {
                        let spec = block.take().expect("open block").finish()?;
                        if s.obstacles.iter().any(|o| o.id == spec.id) {
                            return Err(err(ln, format!("duplicate obstacle id `{}`", spec.id)));
                        }
                        s.obstacles.push(spec);
                    }
                    _ => return Err(err(ln, format!("unknown obstacle key `{key}`"))),
                }
                continue;
            }
            match key {
                "name" => s.name = args.join(" "),
                "seed" => {
                    s.seed = args
                        .first()
                        .and_then(|a| a.parse().ok())
                        .filter(|_| args.len() == 1)
                        .ok_or_else(|| err(ln, "seed must be an unsigned integer"))?
                }
                "bounds" => {
                    let v = nums(ln, args, 4)?;
                    if !(v[2] > v[0] && v[3] > v[1]) {
                        return Err(err(ln, "bounds must be x_min y_min x_max y_max"));
                    }
                    s.bounds = [v[0], v[1], v[2], v[3]];
                    have_bounds = true;
                }
                "walls" => s.walls = Some(nums(ln, args, 1)?[0]).filter(|h| *h > 0.0),
                "start" => {
                    let v = nums(ln, args, 3)?;
                    s.start = Pose2::new(v[0], v[1], v[2]);
                }
                "duration" => s.duration = nums(ln, args, 1)?[0],
                "noise" => s.noise = nums(ln, args, 1)?[0],
                "ground_truth" => {
                    s.ground_truth = match args {
                        ["true"] => true,
                        ["false"] => false,
                        _ => return Err(err(ln, "ground_truth must be true or false")),
                    }
                }
                "goal" => {
                    let (pose_args, at) = match args {
                        [a, b, c, "at", t] => ([*a, *b, *c], nums(ln, &[*t], 1)?[0]),
                        [a, b, c] => ([*a, *b, *c], 0.0),
                        _ => return Err(err(ln, "goal expects x y beta [at t]")),
                    };
                    let v = nums(ln, &pose_args, 3)?;
                    s.goals.push(GoalEntry {
                        pose: Pose2::new(v[0], v[1], v[2]),
                        at,
                    });
                }
                "obstacle" => {
                    let [id] = args else {
                        return Err(err(ln, "obstacle expects one id"));
                    };
                    block = Some(Block {
                        id: id.to_string(),
                        line: ln,
                        ..Block::default()
                    });
                }
                _ => return Err(err(ln, format!("unknown key `{key}`"))),
            }
        }
        if let Some(b) = block {
            return Err(err(b.line, format!("obstacle `{}` is not closed with `end`", b.id)));
        }
        if !have_bounds {
            return Err(err(0, "missing `bounds`"));
        }
        if s.goals.is_empty() {
            return Err(err(0, "at least one goal is required"));
        }
        if !(s.duration > 0.0) || !(s.noise >= 0.0) {
            return Err(err(0, "duration must be positive and noise non-negative"));
        }
        if s.goals.windows(2).any(|w| w[1].at < w[0].at) || s.goals[0].at < 0.0 {
            return Err(err(0, "goal issue times must be non-negative and non-decreasing"));
        }
        Ok(s)
    }

    /// Scenario obstacles plus the boundary walls, which sit just outside the bounds.
    pub fn world_obstacles(&self) -> Vec<ObstacleSpec> {
        let mut out = self.obstacles.clone();
        if let Some(height) = self.walls {
            let [x0, y0, x1, y1] = self.bounds;
            let (w, h) = (x1 - x0 + 2.0 * WALL_THICKNESS, y1 - y0 + 2.0 * WALL_THICKNESS);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let t = WALL_THICKNESS;
            let walls = [
                ("wall_south", [cx, y0 - t / 2.0], Shape::Box { w, h: t }),
                ("wall_north", [cx, y1 + t / 2.0], Shape::Box { w, h: t }),
                ("wall_west", [x0 - t / 2.0, cy], Shape::Box { w: t, h }),
                ("wall_east", [x1 + t / 2.0, cy], Shape::Box { w: t, h }),
            ];
            for (id, at, shape) in walls {
                out.push(ObstacleSpec {
                    id: id.into(),
                    shape,
                    height,
                    trajectory: Trajectory::Static { at },
                });
            }
        }
        out
    }
}
