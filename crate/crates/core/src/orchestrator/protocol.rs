//! JSON messages between the run and an operator client.
//!
//! Client → server: `set_goal`, `obstacle_cmd`, `pause`, `resume`, `step`.
//! Server → client: `snapshot`, `error`. Every message is one JSON object
//! with a `type` tag.

use serde::{Deserialize, Serialize};

use super::log::{Event, Status};
use crate::geometry::Pose2;
use crate::sim::{PlacedObstacle, Shape};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleOp {
    /// Adds a new obstacle; with `waypoints` it moves along them.
    Add,
    /// Places an existing obstacle at `x, y` and stops it there.
    Move,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetGoal {
        x: f64,
        y: f64,
        #[serde(default)]
        beta: f64,
    },
    ObstacleCmd {
        op: ObstacleOp,
        id: String,
        #[serde(default)]
        shape: Option<Shape>,
        #[serde(default)]
        x: Option<f64>,
        #[serde(default)]
        y: Option<f64>,
        #[serde(default)]
        height: Option<f64>,
        #[serde(default)]
        waypoints: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        speed: Option<f64>,
    },
    Pause,
    Resume,
    /// Advances a paused run by `ticks` base ticks.
    Step {
        #[serde(default = "one")]
        ticks: u64,
    },
}

fn one() -> u64 {
    1
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPose {
    pub x: f64,
    pub y: f64,
    pub beta: f64,
    /// Interval to the next pose; 0 on the last.
    pub dt: f64,
}

/// Everything a client needs to redraw, with no memory of earlier snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub tick: u64,
    pub t: f64,
    pub paused: bool,
    pub status: Status,
    pub true_pose: Pose2,
    pub est_pose: Pose2,
    pub goal: Option<Pose2>,
    pub cmd: [f64; 2],
    /// Costmap text serialization (header line, value line, cells line).
    pub global_map: String,
    pub local_map: String,
    pub global_path: Vec<[f64; 2]>,
    pub band: Vec<BandPose>,
    pub obstacles: Vec<PlacedObstacle>,
    /// Estimated positions at the odometry rate, oldest first.
    pub trail: Vec<[f64; 2]>,
    /// Events since the previous snapshot.
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot(Box<Snapshot>),
    Error { message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
