//! Fixed-tick pipeline on a simulated clock: sensors → filters → RANSAC →
//! maps → odometry → global plan → TEB → command → world step.

mod log;
mod perception;
mod protocol;
mod serve;

pub use log::{Event, GoalSource, Outcome, ReplanCause, RunLog, Status, TickRecord, LOG_SCHEMA_VERSION};
pub use perception::{detect, mount_transforms, to_world, Detections, PerceptionConfig, SensorFrame, BASE_FRAME};
pub use protocol::{BandPose, ClientMessage, ObstacleOp, ServerMessage, Snapshot, PROTOCOL_VERSION};
pub use serve::{serve, ServeOptions};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costmap::{Costmap, GridSpec, InflationConfig, MapKind, OCCUPIED};
use crate::dstar::{Cell, DStarLite, GridGraph, PlanStatus};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};
use crate::loam::{process_scan, LoamConfig, OdomState, RigidTransform3};
use crate::sim::{
    check_collision, simulate_depth, simulate_lidar, step_robot, ObstacleSpec, RangeNoise, RobotState, Scenario,
    SensorSpec, Trajectory, World,
};
use crate::teb::{extract_command, initialize_band, optimize, warm_start, BandWindow, Command, ObstacleSet, TebBand, TebConfig};

/// Stage periods in base ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTable {
    pub tick: f64,
    pub sensor: u64,
    pub local_map: u64,
    pub odometry: u64,
    pub teb: u64,
    pub control: u64,
    pub global_plan: u64,
    pub global_map: u64,
}

impl Default for RateTable {
    /// 0.005 s ticks: sensors every 0.07 s (≈14 Hz), local map, odometry,
    /// TEB and control at 10 Hz, global plan at 5 Hz, global map at 2 Hz.
    fn default() -> Self {
        Self {
            tick: 0.005,
            sensor: 14,
            local_map: 20,
            odometry: 20,
            teb: 20,
            control: 20,
            global_plan: 40,
            global_map: 100,
        }
    }
}

impl RateTable {
    pub fn validate(&self) -> Result<()> {
        let periods = [
            self.sensor,
            self.local_map,
            self.odometry,
            self.teb,
            self.control,
            self.global_plan,
            self.global_map,
        ];
        if !(self.tick > 0.0) || periods.contains(&0) {
            return Err(Error::InvalidArgument("tick and all stage periods must be positive".into()));
        }
        Ok(())
    }

    pub fn period(&self, ticks: u64) -> f64 {
        ticks as f64 * self.tick
    }

    pub fn hz(&self, ticks: u64) -> f64 {
        1.0 / self.period(ticks)
    }

    /// Whether a stage with `period` runs on base tick `tick`.
    pub fn fires(&self, tick: u64, period: u64) -> bool {
        tick.is_multiple_of(period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSpec {
    pub pose: Pose2,
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
}

impl GoalSpec {
    pub fn new(pose: Pose2) -> Self {
        Self {
            pose,
            position_tolerance: 0.2,
            heading_tolerance: 0.2,
        }
    }

    pub fn reached_by(&self, p: &Pose2) -> bool {
        p.distance_to(&self.pose) <= self.position_tolerance
            && normalize_angle(p.beta - self.pose.beta).abs() <= self.heading_tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rates: RateTable,
    pub sensors: SensorSpec,
    pub perception: PerceptionConfig,
    pub loam: LoamConfig,
    pub teb: TebConfig,
    pub inflation: InflationConfig,
    pub global_resolution: f64,
    /// Extra map margin around the scenario bounds.
    pub map_margin: f64,
    pub local_size: f64,
    pub local_resolution: f64,
    /// Global-map cells within this distance of an obstacle are closed to the planner.
    pub plan_clearance: f64,
    /// Local obstacles are thinned to one point per cell of this size for TEB.
    pub teb_obstacle_cell: f64,
    /// Unreachable for this long ends the run.
    pub unreachable_timeout: f64,
    /// A command whose forward simulation over this horizon would bring the
    /// robot closer than `safety_margin` to a local-map obstacle has its
    /// linear part dropped.
    pub safety_horizon: f64,
    pub safety_margin: f64,
    /// End the run once every goal is reached.
    pub stop_on_goal: bool,
    pub dump_maps: Option<PathBuf>,
    pub dump_clouds: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rates: RateTable::default(),
            sensors: SensorSpec::default(),
            perception: PerceptionConfig::default(),
            loam: LoamConfig::default(),
            teb: TebConfig::default(),
            inflation: InflationConfig::default(),
            global_resolution: 0.1,
            map_margin: 0.5,
            local_size: 4.0,
            local_resolution: 0.05,
            plan_clearance: 0.3,
            teb_obstacle_cell: 0.1,
            unreachable_timeout: 3.0,
            safety_horizon: 0.3,
            safety_margin: 0.03,
            stop_on_goal: true,
            dump_maps: None,
            dump_clouds: None,
        }
    }
}

/// Odometry anchor: the estimate and command-integrated pose at the last
/// successfully registered scan.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    est: Pose2,
    dead: Pose2,
}

#[derive(Debug, Clone)]
struct Plan {
    planner: DStarLite,
    goal: GoalSpec,
    path: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Runner {
    scenario: Scenario,
    cfg: RunConfig,
    seed: u64,
    tick: u64,
    world: World,
    robot: RobotState,
    rng: ChaCha8Rng,

    frame: Option<SensorFrame>,
    /// Detections and the pose estimate at their capture time.
    detections: Option<(Detections, Pose2)>,
    global: Costmap,
    planning: Costmap,
    local: Costmap,

    odom: OdomState,
    /// Integral of the applied commands (the controller's own motion model).
    dead: Pose2,
    /// `dead` at the start of each recent tick, oldest first.
    dead_history: VecDeque<Pose2>,
    anchor: Anchor,
    est: Pose2,
    last_scan_tick: Option<u64>,

    plan: Option<Plan>,
    band: Option<(TebBand, f64)>,
    command: Command,

    goal: Option<GoalSpec>,
    pending_goals: VecDeque<crate::sim::GoalEntry>,
    status: Status,
    unreachable_since: Option<f64>,
    queue: VecDeque<ClientMessage>,
    scheduled: BTreeMap<u64, Vec<ClientMessage>>,
    events: Vec<Event>,
    snapshot_events: Vec<Event>,
    records: Vec<TickRecord>,
    trail: Vec<[f64; 2]>,
    outcome: Option<Outcome>,
}

fn spec_is_finite(spec: &ObstacleSpec) -> bool {
    let dims = match spec.shape {
        crate::sim::Shape::Circle { radius } => vec![radius],
        crate::sim::Shape::Box { w, h } => vec![w, h],
    };
    let coords: Vec<f64> = match &spec.trajectory {
        Trajectory::Static { at } => at.to_vec(),
        Trajectory::Waypoints { points, speed, .. } => points.iter().flatten().copied().chain([*speed]).collect(),
    };
    let ok = dims.iter().chain(&coords).chain([&spec.height]).all(|v| v.is_finite());
    ok
}

fn pose_cell(spec: &GridSpec, p: [f64; 2]) -> Option<Cell> {
    spec.try_cell(p)
}

impl Runner {
    pub fn new(scenario: &Scenario, cfg: RunConfig, seed: Option<u64>) -> Result<Self> {
        cfg.rates.validate()?;
        cfg.loam.validate()?;
        cfg.teb.validate()?;
        cfg.inflation.validate()?;
        let seed = seed.unwrap_or(scenario.seed);
        let world = World::new(scenario.world_obstacles())?;
        let [x0, y0, x1, y1] = scenario.bounds;
        let m = cfg.map_margin;
        let res = cfg.global_resolution;
        let spec = GridSpec::new(
            res,
            x0 - m,
            y0 - m,
            ((x1 - x0 + 2.0 * m) / res).round() as usize,
            ((y1 - y0 + 2.0 * m) / res).round() as usize,
        )?;
        let global = Costmap::new(spec, MapKind::Global);
        if global.spec.try_cell(scenario.start.position()).is_none() {
            return Err(Error::InvalidArgument("start pose lies outside the map".into()));
        }
        let local = Costmap::local_window(scenario.start.position(), cfg.local_size, cfg.local_resolution)?;
        let mut loam = cfg.loam;
        loam.robust_min = loam.robust_min.max(3.0 * scenario.noise);
        let mut robot = RobotState::new(scenario.start);
        robot.v_max = cfg.teb.v_max;
        robot.omega_max = cfg.teb.omega_max;
        Ok(Self {
            cfg: RunConfig { loam, ..cfg },
            seed,
            tick: 0,
            world,
            robot,
            rng: ChaCha8Rng::seed_from_u64(seed),
            frame: None,
            detections: None,
            planning: global.clone(),
            global,
            local,
            odom: OdomState::new(),
            dead: scenario.start,
            dead_history: VecDeque::new(),
            anchor: Anchor {
                est: scenario.start,
                dead: scenario.start,
            },
            est: scenario.start,
            last_scan_tick: None,
            plan: None,
            band: None,
            command: Command::STOP,
            goal: None,
            pending_goals: scenario.goals.iter().copied().collect(),
            status: Status::Idle,
            unreachable_since: None,
            queue: VecDeque::new(),
            scheduled: BTreeMap::new(),
            events: Vec::new(),
            snapshot_events: Vec::new(),
            records: Vec::new(),
            trail: vec![scenario.start.position()],
            outcome: None,
            scenario: scenario.clone(),
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.rates.tick
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    pub fn global_map(&self) -> &Costmap {
        &self.global
    }

    pub fn local_map(&self) -> &Costmap {
        &self.local
    }

    pub fn band(&self) -> Option<&TebBand> {
        self.band.as_ref().map(|(b, _)| b)
    }

    pub fn global_path(&self) -> &[[f64; 2]] {
        self.plan.as_ref().map(|p| p.path.as_slice()).unwrap_or(&[])
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn true_pose(&self) -> Pose2 {
        self.robot.pose
    }

    pub fn estimated_pose(&self) -> Pose2 {
        self.est
    }

    pub fn into_log(self) -> RunLog {
        RunLog {
            records: self.records,
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
        }
    }

    /// Checks an operator command against the current state and queues it
    /// for the next tick boundary. Rejected commands leave the state
    /// untouched; a rejected goal is still logged as `goal_rejected`.
    pub fn submit(&mut self, msg: ClientMessage) -> std::result::Result<(), String> {
        match &msg {
            ClientMessage::SetGoal { x, y, beta } => {
                if !(x.is_finite() && y.is_finite() && beta.is_finite()) {
                    return Err("goal must be finite".into());
                }
                if let Some(reason) = self.goal_problem(&Pose2::new(*x, *y, *beta)) {
                    // Still queued so the rejection lands in the log.
                    self.queue.push_back(msg);
                    return Err(reason);
                }
            }
            ClientMessage::ObstacleCmd { .. } => {
                self.obstacle_from_command(&msg)?;
            }
            ClientMessage::Pause | ClientMessage::Resume | ClientMessage::Step { .. } => {
                return Err("pause, resume and step are handled by the service loop".into());
            }
        }
        self.queue.push_back(msg);
        Ok(())
    }

    /// Queues `msg` to be submitted just before base tick `tick`.
    pub fn schedule(&mut self, tick: u64, msg: ClientMessage) {
        self.scheduled.entry(tick).or_default().push(msg);
    }

    fn goal_problem(&self, goal: &Pose2) -> Option<String> {
        match self.global.spec.try_cell(goal.position()) {
            None => Some("goal lies outside the map".into()),
            Some((c, r)) if self.global.is_occupied(c, r) => Some("goal lies in an occupied cell".into()),
            _ => None,
        }
    }

    fn obstacle_from_command(&self, msg: &ClientMessage) -> std::result::Result<Option<ObstacleSpec>, String> {
        let ClientMessage::ObstacleCmd {
            op,
            id,
            shape,
            x,
            y,
            height,
            waypoints,
            speed,
        } = msg
        else {
            return Err("not an obstacle command".into());
        };
        let existing = self.world.obstacles.iter().find(|o| &o.id == id);
        let spec = match op {
            ObstacleOp::Remove => {
                return existing.map(|_| None).ok_or_else(|| format!("no obstacle `{id}`"));
            }
            ObstacleOp::Add => {
                if existing.is_some() {
                    return Err(format!("obstacle `{id}` already exists"));
                }
                let shape = shape.ok_or("add needs a shape")?;
                let trajectory = match (waypoints, x, y) {
                    (Some(points), _, _) => Trajectory::Waypoints {
                        points: points.clone(),
                        speed: speed.unwrap_or(crate::sim::DEFAULT_OBSTACLE_SPEED),
                        start_time: self.time(),
                    },
                    (None, Some(x), Some(y)) => Trajectory::Static { at: [*x, *y] },
                    _ => return Err("add needs x, y or waypoints".into()),
                };
                ObstacleSpec {
                    id: id.clone(),
                    shape,
                    height: height.unwrap_or(crate::sim::DEFAULT_OBSTACLE_HEIGHT),
                    trajectory,
                }
            }
            ObstacleOp::Move => {
                let old = existing.ok_or_else(|| format!("no obstacle `{id}`"))?;
                let (Some(x), Some(y)) = (x, y) else {
                    return Err("move needs x and y".into());
                };
                ObstacleSpec {
                    trajectory: Trajectory::Static { at: [*x, *y] },
                    shape: shape.unwrap_or(old.shape),
                    height: height.unwrap_or(old.height),
                    ..old.clone()
                }
            }
        };
        if !spec_is_finite(&spec) {
            return Err("obstacle values must be finite".into());
        }
        spec.validate().map_err(|e| e.to_string())?;
        Ok(Some(spec))
    }

    fn emit(&mut self, e: Event) {
        self.events.push(e);
    }

    fn set_goal(&mut self, pose: Pose2, source: GoalSource) {
        if let Some(reason) = self.goal_problem(&pose) {
            self.emit(Event::GoalRejected { goal: pose, source, reason });
            return;
        }
        let goal = GoalSpec::new(pose);
        self.goal = Some(goal);
        self.plan = None;
        self.band = None;
        self.unreachable_since = None;
        self.status = Status::Moving;
        self.emit(Event::GoalSet { goal: pose, source });
        if goal.reached_by(&self.est) {
            self.status = Status::Reached;
            self.command = Command::STOP;
            self.emit(Event::GoalReached { goal: pose });
        }
    }

    fn apply_queued(&mut self) {
        while let Some(msg) = self.queue.pop_front() {
            match &msg {
                ClientMessage::SetGoal { x, y, beta } => self.set_goal(Pose2::new(*x, *y, *beta), GoalSource::Operator),
                ClientMessage::ObstacleCmd { op, id, .. } => match self.obstacle_from_command(&msg) {
                    Ok(Some(spec)) => {
                        if self.world.upsert(spec.clone()).is_ok() {
                            self.emit(Event::ObstacleCommand {
                                op: *op,
                                id: id.clone(),
                                spec: Some(spec),
                            });
                        }
                    }
                    Ok(None) => {
                        self.world.remove(id);
                        self.emit(Event::ObstacleCommand {
                            op: *op,
                            id: id.clone(),
                            spec: None,
                        });
                    }
                    Err(reason) => ::log::debug!("obstacle command dropped: {reason}"),
                },
                _ => {}
            }
        }
    }

    /// Estimate propagated from the odometry anchor with the commands applied since.
    fn predict(&self) -> Pose2 {
        self.anchor.est.compose(&self.anchor.dead.between(&self.dead))
    }

    fn stage_sensors(&mut self, t: f64) -> Result<()> {
        let obstacles = self.world.snapshot();
        let pose = self.robot.pose;
        let mut noise = RangeNoise {
            sigma: self.scenario.noise,
            rng: &mut self.rng,
        };
        let (scan, lidar) = simulate_lidar(&self.cfg.sensors.lidar, &obstacles, &pose, t, self.tick, &mut noise);
        let depth = self
            .cfg
            .sensors
            .cameras
            .iter()
            .map(|cam| simulate_depth(cam, &obstacles, &pose, t, &mut noise))
            .collect();
        let frame = SensorFrame {
            tick: self.tick,
            stamp: t,
            scan,
            lidar,
            depth,
        };
        let det = detect(&frame, &self.cfg.sensors, &self.cfg.perception, self.seed ^ self.tick)?;
        if let Some(dir) = &self.cfg.dump_clouds {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{:07}_lidar.txt", self.tick)), frame.lidar.to_text())?;
            for c in &frame.depth {
                std::fs::write(dir.join(format!("{:07}_{}.txt", self.tick, c.frame)), c.to_text())?;
            }
            std::fs::write(dir.join(format!("{:07}_obstacles.txt", self.tick)), det.depth.to_text())?;
        }
        self.frame = Some(frame);
        // The pose at capture is refined once odometry has seen this frame.
        self.detections = Some((det, self.predict()));
        Ok(())
    }

    fn stage_odometry(&mut self) {
        if self.scenario.ground_truth {
            self.anchor = Anchor {
                est: self.robot.pose,
                dead: self.dead,
            };
            self.est = self.robot.pose;
            return;
        }
        let Some(frame) = &self.frame else { return };
        if self.last_scan_tick == Some(frame.tick) {
            return;
        }
        self.last_scan_tick = Some(frame.tick);
        // Command-integrated pose at the capture tick.
        let ticks_since = self.tick - frame.tick;
        let dead_at_scan = self.dead_at(ticks_since);
        if self.odom.has_reference() {
            let d = self.anchor.dead.between(&dead_at_scan);
            self.odom.last_step = RigidTransform3::from_planar(d.x, d.y, d.beta);
        }
        match process_scan(&mut self.odom, &frame.scan, &self.cfg.loam) {
            Ok(_) => {
                let est = self.scenario.start.compose(&self.odom.planar());
                self.anchor = Anchor { est, dead: dead_at_scan };
                if let Some((_, pose)) = &mut self.detections {
                    *pose = est;
                }
            }
            Err(e) => self.emit(Event::OdometryDegenerate { reason: e.to_string() }),
        }
        self.est = self.predict();
        self.trail.push(self.est.position());
    }

    /// Command-integrated pose `ticks` ticks ago.
    fn dead_at(&self, ticks: u64) -> Pose2 {
        let n = self.dead_history.len();
        let k = ticks as usize;
        if k == 0 || n == 0 {
            return self.dead;
        }
        self.dead_history[n.saturating_sub(k)]
    }

    fn stage_global_map(&mut self) -> Result<()> {
        let Some((det, pose)) = &self.detections else { return Ok(()) };
        let world = to_world(&det.lidar, pose);
        let changed = self.global.mark_obstacles(&world);
        if !changed.is_empty() {
            let r = (self.cfg.plan_clearance / self.global.spec.resolution).ceil() as i64;
            let spec = self.global.spec;
            for (c, rr) in &changed {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (x, y) = (*c as i64 + dx, *rr as i64 + dy);
                        if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
                            continue;
                        }
                        if ((dx * dx + dy * dy) as f64).sqrt() * spec.resolution <= self.cfg.plan_clearance + 1e-9 {
                            self.planning.set(x as usize, y as usize, OCCUPIED);
                        }
                    }
                }
            }
            self.emit(Event::ObstacleDetected { cells: changed.len() });
        }
        if let Some(dir) = &self.cfg.dump_maps {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("global_{:07}.txt", self.tick)), self.global.to_text())?;
            std::fs::write(dir.join(format!("planning_{:07}.txt", self.tick)), self.planning.to_text())?;
        }
        Ok(())
    }

    fn stage_local_map(&mut self) -> Result<()> {
        let Some((det, pose)) = &self.detections else { return Ok(()) };
        let lidar = to_world(&det.lidar, pose);
        let depth = to_world(&det.depth, pose);
        crate::costmap::update_local(&mut self.local, &lidar, &depth, &self.est, &self.cfg.inflation)?;
        if let Some(dir) = &self.cfg.dump_maps {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("local_{:07}.txt", self.tick)), self.local.to_text())?;
        }
        Ok(())
    }

    /// Planner start: the robot's cell, or the nearest open cell when the
    /// clearance band has swallowed it.
    fn start_cell(&self) -> Option<Cell> {
        let spec = &self.planning.spec;
        let (c, r) = pose_cell(spec, self.est.position())?;
        if !self.planning.is_occupied(c, r) {
            return Some((c, r));
        }
        let mut best: Option<(i64, Cell)> = None;
        for dy in -5i64..=5 {
            for dx in -5i64..=5 {
                let (x, y) = (c as i64 + dx, r as i64 + dy);
                if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
                    continue;
                }
                let cell = (x as usize, y as usize);
                let d = dx * dx + dy * dy;
                if !self.planning.is_occupied(cell.0, cell.1) && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, cell));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    fn stage_global_plan(&mut self, t: f64) {
        let Some(goal) = self.goal else { return };
        if self.status == Status::Reached {
            return;
        }
        let Some(start) = self.start_cell() else {
            self.emit(Event::PlannerFailure {
                reason: "robot is off the map or boxed in".into(),
            });
            return;
        };
        let spec = self.planning.spec;
        let goal_cell = pose_cell(&spec, goal.pose.position()).expect("goal checked on entry");
        // The goal itself stays open even inside the clearance band.
        let mut planning = self.planning.clone();
        if !self.global.is_occupied(goal_cell.0, goal_cell.1) {
            planning.set(goal_cell.0, goal_cell.1, crate::costmap::FREE);
        }
        let fresh = self.plan.as_ref().is_none_or(|p| p.goal != goal);
        let (cause, changed, status, planner) = if fresh {
            let mut planner = match DStarLite::new(GridGraph::from_costmap(&planning), start, goal_cell) {
                Ok(p) => p,
                Err(e) => {
                    self.emit(Event::PlannerFailure { reason: e.to_string() });
                    return;
                }
            };
            let status = planner.compute_shortest_path();
            (ReplanCause::Goal, 0, status, planner)
        } else {
            let mut planner = self.plan.take().expect("existing plan").planner;
            match planner.sync_with(&planning, start) {
                Ok((changed, status)) => (ReplanCause::Obstacles, changed.len(), status, planner),
                Err(e) => {
                    self.emit(Event::PlannerFailure { reason: e.to_string() });
                    return;
                }
            }
        };
        let path: Vec<[f64; 2]> = match status {
            PlanStatus::Found => planner
                .extract_path()
                .map(|cells| cells.iter().map(|&(c, r)| spec.cell_center(c, r)).collect())
                .unwrap_or_default(),
            PlanStatus::Unreachable => Vec::new(),
        };
        if fresh || changed > 0 {
            self.emit(Event::Replan {
                cause,
                changed_cells: changed,
                path_cells: path.len(),
            });
        }
        if path.is_empty() {
            if self.status != Status::Unreachable {
                self.emit(Event::Unreachable);
            }
            self.status = Status::Unreachable;
            self.unreachable_since.get_or_insert(t);
        } else {
            self.status = Status::Moving;
            self.unreachable_since = None;
        }
        self.plan = Some(Plan { planner, goal, path });
    }

    fn teb_obstacles(&self) -> ObstacleSet {
        let cell = self.cfg.teb_obstacle_cell;
        let mut keys = BTreeSet::new();
        for (c, r) in self.local.occupied_cells() {
            let p = self.local.spec.cell_center(c, r);
            keys.insert(((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64));
        }
        ObstacleSet::from_points(keys.into_iter().map(|(i, j)| [(i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell]))
    }

    fn stage_teb(&mut self, t: f64) {
        let (Some(goal), Some(plan)) = (self.goal, self.plan.as_ref()) else {
            self.band = None;
            return;
        };
        if self.status != Status::Moving || plan.path.is_empty() {
            self.band = None;
            return;
        }
        let window = BandWindow::from_grid(&self.local.spec);
        let cfg = &self.cfg.teb;
        let fresh = match initialize_band(&plan.path, self.est, goal.pose, &window, cfg) {
            Ok(b) => b,
            Err(e) => {
                self.emit(Event::PlannerFailure { reason: e.to_string() });
                self.band = None;
                return;
            }
        };
        let seed = match &self.band {
            Some((old, stamp))
                if t - stamp < 0.5
                    && old.final_velocity == fresh.final_velocity
                    && old.poses.last().expect("band").distance_to(fresh.poses.last().expect("band")) < 0.3 =>
            {
                warm_start(old, self.est, *fresh.poses.last().expect("band"), fresh.final_velocity, cfg)
            }
            _ => fresh,
        };
        let obstacles = self.teb_obstacles();
        match optimize(&seed, cfg, &obstacles) {
            Ok(rep) => self.band = Some((rep.band, t)),
            Err(e) => {
                self.emit(Event::PlannerFailure { reason: e.to_string() });
                self.band = None;
            }
        }
    }

    fn stage_control(&mut self, t: f64) {
        if let Some(goal) = self.goal {
            if self.status != Status::Reached && goal.reached_by(&self.est) {
                self.status = Status::Reached;
                self.band = None;
                self.emit(Event::GoalReached { goal: goal.pose });
            }
        }
        self.command = match (&self.band, self.status) {
            (Some((band, stamp)), Status::Moving) => {
                extract_command(band, &self.cfg.teb, *stamp, t, self.cfg.rates.period(self.cfg.rates.control))
            }
            _ => Command::STOP,
        };
        if self.command.v != 0.0 {
            if let Some(clearance) = self.unsafe_clearance() {
                self.command = Command {
                    v: 0.0,
                    omega: self.align_rate(),
                };
                // The band is not warm-started again; the next one is seeded
                // afresh from the global path.
                self.band = None;
                self.emit(Event::SafetyStop { clearance });
            }
        }
    }

    /// Turn rate that swings the heading onto the band's direction of travel
    /// (or its reverse, whichever is nearer), used while the linear command is
    /// withheld.
    fn align_rate(&self) -> f64 {
        let Some((band, _)) = &self.band else { return 0.0 };
        let Some(ahead) = band.poses.iter().find(|p| p.distance_to(&self.est) >= 0.15) else {
            return self.command.omega;
        };
        let heading = (ahead.y - self.est.y).atan2(ahead.x - self.est.x);
        let mut err = normalize_angle(heading - self.est.beta);
        if err.abs() > std::f64::consts::FRAC_PI_2 {
            err = normalize_angle(err + std::f64::consts::PI);
        }
        (2.0 * err).clamp(-self.robot.omega_max, self.robot.omega_max)
    }

    /// Rolls the command out over the safety horizon and returns the lowest
    /// predicted clearance if it breaches the margin. Rotation in place never
    /// changes a round robot's clearance, so only the linear part can fail;
    /// motion that keeps or improves an already small clearance is allowed so
    /// the robot can back out.
    fn unsafe_clearance(&self) -> Option<f64> {
        let pts: Vec<[f64; 2]> = self.local.occupied_cells().map(|(c, r)| self.local.spec.cell_center(c, r)).collect();
        let clearance = |p: &Pose2| pts.iter().map(|q| (q[0] - p.x).hypot(q[1] - p.y)).fold(f64::INFINITY, f64::min);
        let limit = self.robot.radius + self.cfg.safety_margin;
        let now = clearance(&self.est);
        let mut state = RobotState::new(self.est);
        state.v_max = self.robot.v_max;
        state.omega_max = self.robot.omega_max;
        let steps = (self.cfg.safety_horizon / 0.02).ceil().max(1.0) as usize;
        let dt = self.cfg.safety_horizon / steps as f64;
        for _ in 0..steps {
            state = match step_robot(&state, self.command.v, self.command.omega, dt) {
                Ok(s) => s,
                Err(_) => return Some(now),
            };
            let c = clearance(&state.pose);
            if c < limit && c < now - 1e-9 {
                return Some(c - self.robot.radius);
            }
        }
        None
    }

    /// Advances one base tick. Returns the outcome once the run has ended.
    pub fn step(&mut self) -> Result<Option<Outcome>> {
        if self.outcome.is_some() {
            return Ok(self.outcome);
        }
        let t = self.time();
        let rates = self.cfg.rates;
        self.world.time = t;
        self.events.clear();

        for msg in self.scheduled.remove(&self.tick).unwrap_or_default() {
            if let Err(reason) = self.submit(msg) {
                ::log::warn!("scheduled command at tick {} rejected: {reason}", self.tick);
            }
        }
        self.apply_queued();
        while self.pending_goals.front().is_some_and(|g| g.at <= t + 1e-9) {
            let g = self.pending_goals.pop_front().expect("front checked");
            self.set_goal(g.pose, GoalSource::Scenario);
        }

        let k = self.tick;
        if rates.fires(k, rates.sensor) {
            self.stage_sensors(t)?;
        }
        if rates.fires(k, rates.odometry) {
            self.stage_odometry();
        } else {
            self.est = if self.scenario.ground_truth { self.robot.pose } else { self.predict() };
        }
        if rates.fires(k, rates.global_map) {
            self.stage_global_map()?;
        }
        if rates.fires(k, rates.local_map) {
            self.stage_local_map()?;
        }
        if rates.fires(k, rates.global_plan) {
            self.stage_global_plan(t);
        }
        if rates.fires(k, rates.teb) {
            self.stage_teb(t);
        }
        if rates.fires(k, rates.control) {
            self.stage_control(t);
        }

        // World step.
        let dt = rates.tick;
        self.robot = step_robot(&self.robot, self.command.v, self.command.omega, dt)?;
        let mut cmd_model = RobotState { pose: self.dead, ..self.robot };
        cmd_model = step_robot(&cmd_model, self.command.v, self.command.omega, dt)?;
        self.dead_history.push_back(self.dead);
        if self.dead_history.len() > 64 {
            self.dead_history.pop_front();
        }
        self.dead = cmd_model.pose;
        self.world.time = t + dt;
        let placed = self.world.snapshot();
        if let Some(hit) = placed
            .iter()
            .find(|o| check_collision(&self.robot.pose, self.robot.radius, std::slice::from_ref(*o)))
        {
            let id = hit.id.clone();
            self.emit(Event::Collision { obstacle: id });
            self.status = Status::Collided;
            self.outcome = Some(Outcome::Collision);
        }

        if self.outcome.is_none() {
            if self.status == Status::Reached && self.pending_goals.is_empty() && self.cfg.stop_on_goal {
                self.outcome = Some(Outcome::GoalReached);
            } else if self
                .unreachable_since
                .is_some_and(|since| t - since >= self.cfg.unreachable_timeout)
            {
                self.outcome = Some(Outcome::Unreachable);
            } else if t + dt >= self.scenario.duration - 1e-9 {
                self.status = Status::TimedOut;
                self.outcome = Some(Outcome::Timeout);
            }
        }

        let events = std::mem::take(&mut self.events);
        self.snapshot_events.extend(events.iter().cloned());
        self.records.push(TickRecord {
            v: LOG_SCHEMA_VERSION,
            tick: k,
            t,
            true_pose: self.robot.pose,
            est_pose: self.est,
            goal: self.goal.map(|g| g.pose),
            status: self.status,
            cmd: [self.command.v, self.command.omega],
            events,
        });
        self.tick += 1;
        Ok(self.outcome)
    }

    /// Steps until the run ends.
    pub fn run_to_end(mut self) -> Result<RunLog> {
        while self.step()?.is_none() {}
        Ok(self.into_log())
    }

    /// Current state for a client; drains the events gathered since the last call.
    pub fn snapshot(&mut self, paused: bool) -> Snapshot {
        let band = self
            .band
            .as_ref()
            .map(|(b, _)| {
                b.poses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| BandPose {
                        x: p.x,
                        y: p.y,
                        beta: p.beta,
                        dt: b.intervals.get(i).copied().unwrap_or(0.0),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Snapshot {
            version: PROTOCOL_VERSION,
            tick: self.tick,
            t: self.time(),
            paused,
            status: self.status,
            true_pose: self.robot.pose,
            est_pose: self.est,
            goal: self.goal.map(|g| g.pose),
            cmd: [self.command.v, self.command.omega],
            global_map: self.global.to_text(),
            local_map: self.local.to_text(),
            global_path: self.global_path().to_vec(),
            band,
            obstacles: self.world.snapshot(),
            trail: self.trail.clone(),
            events: std::mem::take(&mut self.snapshot_events),
        }
    }
}

/// Operator commands recorded in a log, keyed by the tick they took effect
/// on. Scheduling them on a fresh runner reproduces the run.
pub fn operator_commands(records: &[TickRecord]) -> Vec<(u64, ClientMessage)> {
    let mut out = Vec::new();
    for r in records {
        for e in &r.events {
            let msg = match e {
                Event::GoalSet {
                    goal,
                    source: GoalSource::Operator,
                }
                | Event::GoalRejected {
                    goal,
                    source: GoalSource::Operator,
                    ..
                } => ClientMessage::SetGoal {
                    x: goal.x,
                    y: goal.y,
                    beta: goal.beta,
                },
                Event::ObstacleCommand { op, id, spec } => {
                    let (mut x, mut y, mut waypoints, mut speed) = (None, None, None, None);
                    if let Some(spec) = spec {
                        match &spec.trajectory {
                            Trajectory::Static { at } => (x, y) = (Some(at[0]), Some(at[1])),
                            Trajectory::Waypoints { points, speed: s, .. } => {
                                (waypoints, speed) = (Some(points.clone()), Some(*s));
                            }
                        }
                    }
                    ClientMessage::ObstacleCmd {
                        op: *op,
                        id: id.clone(),
                        shape: spec.as_ref().map(|s| s.shape),
                        x,
                        y,
                        height: spec.as_ref().map(|s| s.height),
                        waypoints,
                        speed,
                    }
                }
                _ => continue,
            };
            out.push((r.tick, msg));
        }
    }
    out
}

/// Runs a scenario headless to completion.
pub fn run(scenario: &Scenario, cfg: RunConfig, seed: Option<u64>) -> Result<RunLog> {
    Runner::new(scenario, cfg, seed)?.run_to_end()
}
