//! Band optimization: resize, obstacle association, sparse-structured LM.
//!
//! Free variables are laid out as `[x, y, β]` for every interior pose
//! followed by all intervals; the first and last pose never move.

use nalgebra::{DMatrix, DVector};

use super::constraints::{
    objective, raw, raw_acceleration, raw_goal_acceleration, raw_kinematic, raw_velocity, Raw,
};
use super::{ObstacleSet, TebBand, TebConfig};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};
use crate::lm::{self, LeastSquaresProblem, LmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Central differences per residual block.
    Numeric,
    /// Closed-form block derivatives.
    Analytic,
}

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Time,
    Kinematic,
    Velocity,
    Acceleration,
    Obstacle(usize),
    GoalAcceleration(f64),
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    kind: Kind,
    poses: [usize; 3],
    np: usize,
    dts: [usize; 2],
    nd: usize,
}

impl Edge {
    fn rows(&self) -> usize {
        match self.kind {
            Kind::Time | Kind::Kinematic | Kind::Obstacle(_) => 1,
            _ => 2,
        }
    }

    fn segment(kind: Kind, k: usize) -> Self {
        Self {
            kind,
            poses: [k, k + 1, 0],
            np: 2,
            dts: [k, 0],
            nd: 1,
        }
    }
}

fn neg_part(x: f64) -> f64 {
    x.min(0.0)
}

/// Derivative of `√σ·min(0, limit − |v|)` given `dv`.
fn limit_grad(limit: f64, v: f64, sqrt_w: f64) -> f64 {
    if limit - v.abs() < 0.0 {
        -sqrt_w * v.signum()
    } else {
        0.0
    }
}

/// `(v, ∂v/∂[a, b, dt], ω, ∂ω/∂[a, b, dt])` for one segment.
fn velocity_with_grad(a: &Raw, b: &Raw, dt: f64, kappa: f64) -> (f64, [f64; 7], f64, [f64; 7]) {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len = dx.hypot(dy);
    let (s, c) = a[2].sin_cos();
    let u = kappa * (c * dx + s * dy);
    let gamma = u / (1.0 + u.abs());
    let gp = 1.0 / ((1.0 + u.abs()) * (1.0 + u.abs()));
    let v = len * gamma / dt;
    let (lx, ly) = if len > 0.0 { (dx / len, dy / len) } else { (0.0, 0.0) };
    let dv_dx = (lx * gamma + len * gp * kappa * c) / dt;
    let dv_dy = (ly * gamma + len * gp * kappa * s) / dt;
    let dv_db0 = len * gp * kappa * (-s * dx + c * dy) / dt;
    let gv = [-dv_dx, -dv_dy, dv_db0, dv_dx, dv_dy, 0.0, -v / dt];
    let w = normalize_angle(b[2] - a[2]) / dt;
    let gw = [0.0, 0.0, -1.0 / dt, 0.0, 0.0, 1.0 / dt, -w / dt];
    (v, gv, w, gw)
}

/// Evaluation context for residual blocks.
struct Ctx<'a> {
    cfg: &'a TebConfig,
    obstacles: &'a ObstacleSet,
}

impl Ctx<'_> {
    /// Weighted residuals of one block from its local poses and intervals.
    fn eval(&self, kind: Kind, p: &[Raw; 3], dt: &[f64; 2]) -> [f64; 2] {
        let cfg = self.cfg;
        match kind {
            Kind::Time => [dt[0], 0.0],
            Kind::Kinematic => [cfg.weight_kinematics.sqrt() * raw_kinematic(&p[0], &p[1]), 0.0],
            Kind::Velocity => {
                let (v, w) = raw_velocity(&p[0], &p[1], dt[0], cfg.kappa);
                let s = cfg.weight_velocity.sqrt();
                [s * neg_part(cfg.v_max - v.abs()), s * neg_part(cfg.omega_max - w.abs())]
            }
            Kind::Acceleration => {
                let (a, wd) = raw_acceleration(&p[0], &p[1], &p[2], dt[0], dt[1], cfg.kappa);
                let s = cfg.weight_acceleration.sqrt();
                [s * neg_part(cfg.acc_max - a.abs()), s * neg_part(cfg.omega_dot_max - wd.abs())]
            }
            Kind::GoalAcceleration(v_end) => {
                let (a, wd) = raw_goal_acceleration(&p[0], &p[1], dt[0], v_end, cfg.kappa);
                let s = cfg.weight_acceleration.sqrt();
                [s * neg_part(cfg.acc_max - a.abs()), s * neg_part(cfg.omega_dot_max - wd.abs())]
            }
            Kind::Obstacle(l) => {
                let d = self.obstacles.obstacles[l].distance([p[0][0], p[0][1]]);
                [
                    cfg.weight_obstacle.sqrt() * neg_part(d - cfg.robot_radius - cfg.min_obstacle_dist),
                    0.0,
                ]
            }
        }
    }

    /// Local Jacobian: rows × (3 per pose slot, then one per interval slot).
    fn numeric_jacobian(&self, e: &Edge, p: &[Raw; 3], dt: &[f64; 2]) -> [[f64; 11]; 2] {
        let mut jac = [[0.0; 11]; 2];
        for i in 0..e.np {
            for c in 0..3 {
                let mut pp = *p;
                let mut pm = *p;
                pp[i][c] += FD_STEP;
                pm[i][c] -= FD_STEP;
                let rp = self.eval(e.kind, &pp, dt);
                let rm = self.eval(e.kind, &pm, dt);
                for r in 0..2 {
                    jac[r][3 * i + c] = (rp[r] - rm[r]) / (2.0 * FD_STEP);
                }
            }
        }
        for j in 0..e.nd {
            let mut tp = *dt;
            let mut tm = *dt;
            tp[j] += FD_STEP;
            tm[j] -= FD_STEP;
            let rp = self.eval(e.kind, p, &tp);
            let rm = self.eval(e.kind, p, &tm);
            for r in 0..2 {
                jac[r][9 + j] = (rp[r] - rm[r]) / (2.0 * FD_STEP);
            }
        }
        jac
    }

    fn analytic_jacobian(&self, e: &Edge, p: &[Raw; 3], dt: &[f64; 2]) -> [[f64; 11]; 2] {
        let cfg = self.cfg;
        let mut jac = [[0.0; 11]; 2];
        // Scatter a gradient over [a(3), b(3), dt] into pose slots i, i+1 and interval slot j.
        let put = |row: &mut [f64; 11], g: &[f64; 7], scale: f64, i: usize, j: usize| {
            for c in 0..3 {
                row[3 * i + c] += scale * g[c];
                row[3 * (i + 1) + c] += scale * g[3 + c];
            }
            row[9 + j] += scale * g[6];
        };
        match e.kind {
            Kind::Time => jac[0][9] = 1.0,
            Kind::Kinematic => {
                let s = cfg.weight_kinematics.sqrt();
                let (s0, c0) = p[0][2].sin_cos();
                let (s1, c1) = p[1][2].sin_cos();
                let dx = p[1][0] - p[0][0];
                let dy = p[1][1] - p[0][1];
                jac[0][0] = s * (s0 + s1);
                jac[0][1] = -s * (c0 + c1);
                jac[0][2] = s * (-s0 * dy - c0 * dx);
                jac[0][3] = -s * (s0 + s1);
                jac[0][4] = s * (c0 + c1);
                jac[0][5] = s * (-s1 * dy - c1 * dx);
            }
            Kind::Velocity => {
                let s = cfg.weight_velocity.sqrt();
                let (v, gv, w, gw) = velocity_with_grad(&p[0], &p[1], dt[0], cfg.kappa);
                put(&mut jac[0], &gv, limit_grad(cfg.v_max, v, s), 0, 0);
                put(&mut jac[1], &gw, limit_grad(cfg.omega_max, w, s), 0, 0);
            }
            Kind::Acceleration => {
                let s = cfg.weight_acceleration.sqrt();
                let (v0, gv0, w0, gw0) = velocity_with_grad(&p[0], &p[1], dt[0], cfg.kappa);
                let (v1, gv1, w1, gw1) = velocity_with_grad(&p[1], &p[2], dt[1], cfg.kappa);
                let sum = dt[0] + dt[1];
                let a = 2.0 * (v1 - v0) / sum;
                let wd = 2.0 * (w1 - w0) / sum;
                let ka = limit_grad(cfg.acc_max, a, s);
                let kw = limit_grad(cfg.omega_dot_max, wd, s);
                put(&mut jac[0], &gv1, ka * 2.0 / sum, 1, 1);
                put(&mut jac[0], &gv0, -ka * 2.0 / sum, 0, 0);
                put(&mut jac[1], &gw1, kw * 2.0 / sum, 1, 1);
                put(&mut jac[1], &gw0, -kw * 2.0 / sum, 0, 0);
                jac[0][9] -= ka * a / sum;
                jac[0][10] -= ka * a / sum;
                jac[1][9] -= kw * wd / sum;
                jac[1][10] -= kw * wd / sum;
            }
            Kind::GoalAcceleration(v_end) => {
                let s = cfg.weight_acceleration.sqrt();
                let t = dt[0];
                let (v, gv, w, gw) = velocity_with_grad(&p[0], &p[1], t, cfg.kappa);
                let a = (v_end - v) / t;
                let wd = -w / t;
                let ka = limit_grad(cfg.acc_max, a, s);
                let kw = limit_grad(cfg.omega_dot_max, wd, s);
                put(&mut jac[0], &gv, -ka / t, 0, 0);
                put(&mut jac[1], &gw, -kw / t, 0, 0);
                jac[0][9] -= ka * a / t;
                jac[1][9] -= kw * wd / t;
            }
            Kind::Obstacle(l) => {
                let (d, g) = self.obstacles.obstacles[l].signed_distance([p[0][0], p[0][1]]);
                if d - cfg.robot_radius - cfg.min_obstacle_dist < 0.0 {
                    let s = cfg.weight_obstacle.sqrt();
                    jac[0][0] = s * g[0];
                    jac[0][1] = s * g[1];
                }
            }
        }
        jac
    }
}

/// Least-squares view of a band with a fixed set of residual blocks.
struct BandProblem<'a> {
    ctx: Ctx<'a>,
    n: usize,
    start: Raw,
    end: Raw,
    edges: Vec<Edge>,
    rows: usize,
    mode: JacobianMode,
}

impl<'a> BandProblem<'a> {
    fn new(band: &TebBand, ctx: Ctx<'a>, edges: Vec<Edge>, mode: JacobianMode) -> Self {
        let rows = edges.iter().map(Edge::rows).sum();
        Self {
            ctx,
            n: band.poses.len(),
            start: raw(&band.poses[0]),
            end: raw(&band.poses[band.poses.len() - 1]),
            edges,
            rows,
            mode,
        }
    }

    fn pose_var(&self, k: usize) -> Option<usize> {
        (k > 0 && k + 1 < self.n).then(|| 3 * (k - 1))
    }

    fn dt_var(&self, j: usize) -> usize {
        3 * (self.n - 2) + j
    }

    fn pose(&self, x: &DVector<f64>, k: usize) -> Raw {
        match self.pose_var(k) {
            Some(i) => [x[i], x[i + 1], x[i + 2]],
            None if k == 0 => self.start,
            None => self.end,
        }
    }

    fn local(&self, x: &DVector<f64>, e: &Edge) -> ([Raw; 3], [f64; 2]) {
        let mut p = [[0.0; 3]; 3];
        let mut dt = [0.0; 2];
        for i in 0..e.np {
            p[i] = self.pose(x, e.poses[i]);
        }
        for j in 0..e.nd {
            dt[j] = x[self.dt_var(e.dts[j])];
        }
        (p, dt)
    }
}

impl LeastSquaresProblem for BandProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.rows);
        let mut row = 0;
        for e in &self.edges {
            let (p, dt) = self.local(x, e);
            let v = self.ctx.eval(e.kind, &p, &dt);
            for i in 0..e.rows() {
                r[row + i] = v[i];
            }
            row += e.rows();
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rows, x.len());
        let mut row = 0;
        for e in &self.edges {
            let (p, dt) = self.local(x, e);
            let local = match self.mode {
                JacobianMode::Numeric => self.ctx.numeric_jacobian(e, &p, &dt),
                JacobianMode::Analytic => self.ctx.analytic_jacobian(e, &p, &dt),
            };
            for r in 0..e.rows() {
                for i in 0..e.np {
                    if let Some(v) = self.pose_var(e.poses[i]) {
                        for c in 0..3 {
                            jac[(row + r, v + c)] += local[r][3 * i + c];
                        }
                    }
                }
                for j in 0..e.nd {
                    jac[(row + r, self.dt_var(e.dts[j]))] += local[r][9 + j];
                }
            }
            row += e.rows();
        }
        jac
    }

    fn project(&self, x: &mut DVector<f64>) {
        let dt_min = self.ctx.cfg.dt_min;
        for j in 0..self.n - 1 {
            let i = self.dt_var(j);
            x[i] = x[i].max(dt_min);
        }
    }
}

fn pack(band: &TebBand) -> DVector<f64> {
    let n = band.poses.len();
    let mut x = DVector::zeros(3 * (n - 2) + n - 1);
    for (k, p) in band.poses[1..n - 1].iter().enumerate() {
        x[3 * k] = p.x;
        x[3 * k + 1] = p.y;
        x[3 * k + 2] = p.beta;
    }
    for (j, dt) in band.intervals.iter().enumerate() {
        x[3 * (n - 2) + j] = *dt;
    }
    x
}

fn unpack(template: &TebBand, x: &DVector<f64>) -> TebBand {
    let n = template.poses.len();
    let mut band = template.clone();
    for k in 1..n - 1 {
        let i = 3 * (k - 1);
        band.poses[k] = Pose2::new(x[i], x[i + 1], x[i + 2]);
    }
    for j in 0..n - 1 {
        band.intervals[j] = x[3 * (n - 2) + j];
    }
    band
}

enum Association {
    All,
    Near,
}

fn build_edges(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet, assoc: Association) -> Vec<Edge> {
    let n = band.poses.len();
    let mut edges = Vec::new();
    for k in 0..n - 1 {
        edges.push(Edge::segment(Kind::Time, k));
        edges.push(Edge::segment(Kind::Kinematic, k));
        edges.push(Edge::segment(Kind::Velocity, k));
    }
    for k in 0..n.saturating_sub(2) {
        edges.push(Edge {
            kind: Kind::Acceleration,
            poses: [k, k + 1, k + 2],
            np: 3,
            dts: [k, k + 1],
            nd: 2,
        });
    }
    let reach = cfg.robot_radius + cfg.min_obstacle_dist + cfg.obstacle_association_dist;
    for k in 0..n - 1 {
        let p = band.poses[k].position();
        for (l, o) in obstacles.obstacles.iter().enumerate() {
            if matches!(assoc, Association::All) || o.distance(p) < reach {
                edges.push(Edge {
                    kind: Kind::Obstacle(l),
                    poses: [k, 0, 0],
                    np: 1,
                    dts: [0, 0],
                    nd: 0,
                });
            }
        }
    }
    if let Some(v_end) = band.final_velocity {
        edges.push(Edge::segment(Kind::GoalAcceleration(v_end), n - 2));
    }
    edges
}

/// Midpoint of the constant-curvature arc joining `a` and `b`; falls back to
/// the chord midpoint when the poses are not arc-consistent.
fn arc_midpoint(a: &Pose2, b: &Pose2) -> Pose2 {
    let turn = normalize_angle(b.beta - a.beta);
    let chord = a.distance_to(b);
    let half = chord / (2.0 * (0.25 * turn).cos());
    let dir = a.beta + 0.25 * turn;
    let on_arc = Pose2::new(a.x + half * dir.cos(), a.y + half * dir.sin(), a.beta + 0.5 * turn);
    let chord_mid = [0.5 * (a.x + b.x), 0.5 * (a.y + b.y)];
    let off = (on_arc.x - chord_mid[0]).hypot(on_arc.y - chord_mid[1]);
    if off <= 0.5 * chord {
        on_arc
    } else {
        Pose2::new(chord_mid[0], chord_mid[1], a.beta + 0.5 * turn)
    }
}

/// Inserts a midpoint pose into over-long intervals and drops a pose after
/// over-short ones, keeping both endpoints.
pub fn resize_band(band: &TebBand, cfg: &TebConfig) -> TebBand {
    let mut poses = vec![band.poses[0]];
    let mut intervals = Vec::new();
    let n = band.poses.len();
    let mut k = 0;
    while k < n - 1 {
        let dt = band.intervals[k];
        let a = *poses.last().expect("band has a start pose");
        let b = band.poses[k + 1];
        if dt > 2.0 * cfg.dt_ref && poses.len() + (n - 1 - k) < cfg.max_poses {
            let mid = arc_midpoint(&a, &b);
            poses.push(mid);
            intervals.push(0.5 * dt);
            poses.push(b);
            intervals.push(0.5 * dt);
            k += 1;
        } else if dt < 0.5 * cfg.dt_ref && k + 2 < n {
            // Drop pose k+1 and merge its two intervals.
            poses.push(band.poses[k + 2]);
            intervals.push(dt + band.intervals[k + 1]);
            k += 2;
        } else {
            poses.push(b);
            intervals.push(dt);
            k += 1;
        }
    }
    TebBand {
        poses,
        intervals,
        final_velocity: band.final_velocity,
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub band: TebBand,
    pub initial_objective: f64,
    pub objective: f64,
    /// Total solver trial steps over all outer iterations.
    pub iterations: usize,
    /// Full objective after every accepted step, per outer iteration; only
    /// filled when `record_trace` is set.
    pub trace: Vec<Vec<f64>>,
    /// The result did not improve on the input, which is returned unchanged.
    pub reverted: bool,
}

fn run_rounds(
    band: &TebBand,
    cfg: &TebConfig,
    obstacles: &ObstacleSet,
    resize: bool,
) -> (TebBand, usize, Vec<Vec<f64>>) {
    let lm_cfg = LmConfig {
        max_iterations: cfg.inner_iterations,
        record_iterates: cfg.record_trace,
        ..LmConfig::default()
    };
    let mut current = band.clone();
    let mut iterations = 0;
    let mut trace = Vec::new();
    for _ in 0..cfg.outer_iterations {
        if resize {
            current = resize_band(&current, cfg);
        }
        let edges = build_edges(&current, cfg, obstacles, Association::Near);
        let problem = BandProblem::new(&current, Ctx { cfg, obstacles }, edges, cfg.jacobian);
        let rep = lm::solve(&problem, pack(&current), &lm_cfg);
        iterations += rep.iterations;
        if cfg.record_trace {
            trace.push(
                rep.iterates
                    .iter()
                    .map(|x| objective(&unpack(&current, x), cfg, obstacles))
                    .collect(),
            );
        }
        current = unpack(&current, &rep.x);
    }
    (current, iterations, trace)
}

/// Runs `outer_iterations` rounds of resize → obstacle association → LM.
pub fn optimize(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> Result<OptimizeReport> {
    cfg.validate()?;
    band.validate(0.0)?;
    let mut input = band.clone();
    let mut initial = objective(&input, cfg, obstacles);
    if !initial.is_finite() {
        for dt in &mut input.intervals {
            *dt = dt.max(cfg.dt_min);
        }
        initial = objective(&input, cfg, obstacles);
        if !initial.is_finite() {
            return Err(Error::OptimizationFailure("objective is not finite".into()));
        }
    }

    let (mut current, mut iterations, mut trace) = run_rounds(&input, cfg, obstacles, true);
    if objective(&current, cfg, obstacles) > initial + 1e-12 {
        // Resizing can raise the objective; retry on the fixed discretization,
        // where every accepted step is a descent step.
        let (fixed, it, tr) = run_rounds(&input, cfg, obstacles, false);
        current = fixed;
        iterations += it;
        trace = tr;
    }

    let value = objective(&current, cfg, obstacles);
    if !value.is_finite() {
        return Err(Error::OptimizationFailure("objective diverged".into()));
    }
    if value > initial + 1e-12 {
        return Ok(OptimizeReport {
            band: input,
            initial_objective: initial,
            objective: initial,
            iterations,
            trace,
            reverted: true,
        });
    }
    Ok(OptimizeReport {
        band: current,
        initial_objective: initial,
        objective: value,
        iterations,
        trace,
        reverted: false,
    })
}

/// Gradients of each objective term with respect to the free variables
/// (interior `[x, y, β]` then intervals), from the closed-form block
/// derivatives and every obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGradients {
    pub time: DVector<f64>,
    pub kinematic: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
    pub obstacle: DVector<f64>,
    pub goal_acceleration: DVector<f64>,
}

pub fn penalty_gradients(band: &TebBand, cfg: &TebConfig, obstacles: &ObstacleSet) -> Result<PenaltyGradients> {
    band.validate(0.0)?;
    let edges = build_edges(band, cfg, obstacles, Association::All);
    let x = pack(band);
    let m = x.len();
    let mut out = PenaltyGradients {
        time: DVector::zeros(m),
        kinematic: DVector::zeros(m),
        velocity: DVector::zeros(m),
        acceleration: DVector::zeros(m),
        obstacle: DVector::zeros(m),
        goal_acceleration: DVector::zeros(m),
    };
    for e in edges {
        let problem = BandProblem::new(band, Ctx { cfg, obstacles }, vec![e], JacobianMode::Analytic);
        let g = 2.0 * problem.jacobian(&x).transpose() * problem.residuals(&x);
        let target = match e.kind {
            Kind::Time => &mut out.time,
            Kind::Kinematic => &mut out.kinematic,
            Kind::Velocity => &mut out.velocity,
            Kind::Acceleration => &mut out.acceleration,
            Kind::Obstacle(_) => &mut out.obstacle,
            Kind::GoalAcceleration(_) => &mut out.goal_acceleration,
        };
        *target += g;
    }
    Ok(out)
}
