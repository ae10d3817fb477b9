//! Run log: one JSON object per tick.
//!
//! Schema version 1. Every record carries `v`, `tick`, `t`, `true_pose`,
//! `est_pose`, `goal` (null when idle), `status`, `cmd` = `[v, ω]` and
//! `events` (possibly empty). Floats are printed in shortest round-trip form,
//! so identical runs give identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use super::protocol::ObstacleOp;
use crate::sim::ObstacleSpec;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Moving,
    Reached,
    Unreachable,
    Collided,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSource {
    Scenario,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanCause {
    Goal,
    Obstacles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    GoalSet { goal: Pose2, source: GoalSource },
    GoalRejected { goal: Pose2, source: GoalSource, reason: String },
    /// The global path was recomputed.
    Replan { cause: ReplanCause, changed_cells: usize, path_cells: usize },
    /// New occupied cells entered the global map.
    ObstacleDetected { cells: usize },
    Unreachable,
    GoalReached { goal: Pose2 },
    Collision { obstacle: String },
    OdometryDegenerate { reason: String },
    PlannerFailure { reason: String },
    /// The command would have closed to within the safety margin of an
    /// obstacle (`clearance` is the predicted gap); the robot turned in place.
    SafetyStop { clearance: f64 },
    /// An operator obstacle command took effect; `spec` is the obstacle as
    /// placed (absent on removal), enough to replay the run.
    ObstacleCommand { op: ObstacleOp, id: String, spec: Option<ObstacleSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub v: u32,
    pub tick: u64,
    pub t: f64,
    pub true_pose: Pose2,
    pub est_pose: Pose2,
    pub goal: Option<Pose2>,
    pub status: Status,
    pub cmd: [f64; 2],
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    GoalReached,
    Collision,
    Timeout,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<TickRecord>,
    pub outcome: Outcome,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("records serialize"));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Vec<TickRecord>> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, &Event)> {
        self.records.iter().flat_map(|r| r.events.iter().map(move |e| (r.t, e)))
    }

    pub fn final_record(&self) -> Option<&TickRecord> {
        self.records.last()
    }
}
