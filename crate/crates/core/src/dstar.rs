//! D* Lite over the 8-connected global costmap grid.
//!
//! The search is anchored at the goal (`rhs(goal) = 0`) and grows toward the
//! robot, with the heuristic measured to the current start cell. When the
//! robot moves, `k_m` absorbs the heuristic shift so queued keys stay valid
//! and only cells touched by map changes need repair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use crate::costmap::{Costmap, OCCUPIED};
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

/// Neighbor offsets in a fixed order; the first four are axial.
const NEIGHBORS: [(isize, isize); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];

/// Traversability view of a global costmap.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    width: usize,
    height: usize,
    free: Vec<bool>,
}

impl GridGraph {
    pub fn from_costmap(map: &Costmap) -> Self {
        Self {
            width: map.spec.width,
            height: map.spec.height,
            free: map.cells.iter().map(|&c| c < OCCUPIED).collect(),
        }
    }

    /// All-free grid, handy for tests and tools.
    pub fn open(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            free: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn id(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    fn cell(&self, id: usize) -> Cell {
        (id % self.width, id / self.width)
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn traversable(&self, c: Cell) -> bool {
        self.contains(c) && self.free[self.id(c)]
    }

    pub fn set_traversable(&mut self, c: Cell, free: bool) {
        let i = self.id(c);
        self.free[i] = free;
    }

    fn offset(&self, c: Cell, d: (isize, isize)) -> Option<Cell> {
        let x = c.0 as isize + d.0;
        let y = c.1 as isize + d.1;
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height).then(|| (x as usize, y as usize))
    }

    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS.iter().filter_map(move |&d| self.offset(c, d))
    }

    /// Cost of the move `a → b` between neighboring cells: 1 axial, √2
    /// diagonal, ∞ if either end is blocked or a diagonal would cut a blocked corner.
    pub fn edge_cost(&self, a: Cell, b: Cell) -> f64 {
        if !self.traversable(a) || !self.traversable(b) {
            return f64::INFINITY;
        }
        let dx = b.0 as isize - a.0 as isize;
        let dy = b.1 as isize - a.1 as isize;
        match (dx.abs(), dy.abs()) {
            (1, 0) | (0, 1) => 1.0,
            (1, 1) => {
                let side1 = (b.0, a.1);
                let side2 = (a.0, b.1);
                if self.traversable(side1) && self.traversable(side2) {
                    SQRT_2
                } else {
                    f64::INFINITY
                }
            }
            _ => f64::INFINITY,
        }
    }
}

/// Euclidean distance in cells.
pub fn heuristic(a: Cell, b: Cell) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Lexicographic priority `[k1, k2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key {
    pub k1: f64,
    pub k2: f64,
}

/// Keys closer than this compare equal. Mathematically tied keys reached by
/// different summation orders differ in the last bits, and treating them as
/// ordered can end the search before a tied cell is expanded.
const KEY_QUANTUM: f64 = 1e-7;

fn quantize(v: f64) -> i64 {
    if v.is_finite() {
        (v / KEY_QUANTUM).round() as i64
    } else {
        i64::MAX
    }
}

impl Key {
    fn cmp(&self, other: &Key) -> Ordering {
        quantize(self.k1)
            .cmp(&quantize(other.k1))
            .then(quantize(self.k2).cmp(&quantize(other.k2)))
    }

    pub fn less_than(&self, other: &Key) -> bool {
        self.cmp(other) == Ordering::Less
    }
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    key: Key,
    id: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp(&self.key).then(other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Found,
    Unreachable,
}

/// D* Lite search state.
#[derive(Debug, Clone)]
pub struct DStarLite {
    graph: GridGraph,
    g: Vec<f64>,
    rhs: Vec<f64>,
    queue: BinaryHeap<QueueEntry>,
    /// Current key of every queued cell; `None` when not in the queue.
    queued: Vec<Option<Key>>,
    k_m: f64,
    start: Cell,
    last_start: Cell,
    goal: Cell,
    status: Option<PlanStatus>,
    expanded: Vec<Cell>,
    record_expansions: bool,
}

impl DStarLite {
    pub fn new(graph: GridGraph, start: Cell, goal: Cell) -> Result<Self> {
        if !graph.contains(start) || !graph.contains(goal) {
            return Err(Error::InvalidArgument("start and goal must lie inside the grid".into()));
        }
        let n = graph.width * graph.height;
        let mut planner = Self {
            graph,
            g: vec![f64::INFINITY; n],
            rhs: vec![f64::INFINITY; n],
            queue: BinaryHeap::new(),
            queued: vec![None; n],
            k_m: 0.0,
            start,
            last_start: start,
            goal,
            status: None,
            expanded: Vec::new(),
            record_expansions: false,
        };
        let gid = planner.graph.id(goal);
        planner.rhs[gid] = 0.0;
        let key = planner.calculate_key(goal);
        planner.push(gid, key);
        Ok(planner)
    }

    /// Keeps a log of every expanded cell (for invariant checks).
    pub fn record_expansions(&mut self, on: bool) {
        self.record_expansions = on;
    }

    pub fn expanded(&self) -> &[Cell] {
        &self.expanded
    }

    pub fn graph(&self) -> &GridGraph {
        &self.graph
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn k_m(&self) -> f64 {
        self.k_m
    }

    pub fn g(&self, c: Cell) -> f64 {
        self.g[self.graph.id(c)]
    }

    pub fn rhs(&self, c: Cell) -> f64 {
        self.rhs[self.graph.id(c)]
    }

    /// Overrides `g`/`rhs` of a cell. Only meant for exercising key arithmetic.
    pub fn set_values(&mut self, c: Cell, g: f64, rhs: f64) {
        let i = self.graph.id(c);
        self.g[i] = g;
        self.rhs[i] = rhs;
    }

    pub fn calculate_key(&self, s: Cell) -> Key {
        let i = self.graph.id(s);
        let m = self.g[i].min(self.rhs[i]);
        Key {
            k1: m + heuristic(s, self.start) + self.k_m,
            k2: m,
        }
    }

    fn push(&mut self, id: usize, key: Key) {
        self.queued[id] = Some(key);
        self.queue.push(QueueEntry { key, id });
    }

    /// Discards stale heap entries so the top reflects the live queue.
    fn top(&mut self) -> Option<QueueEntry> {
        while let Some(e) = self.queue.peek() {
            if self.queued[e.id] == Some(e.key) {
                return Some(*e);
            }
            self.queue.pop();
        }
        None
    }

    /// Recomputes `rhs(s)` from its successors and (re)queues `s` iff it is
    /// locally inconsistent.
    pub fn update_vertex(&mut self, s: Cell) {
        let id = self.graph.id(s);
        if s != self.goal {
            let mut best = f64::INFINITY;
            for n in self.graph.neighbors(s) {
                let c = self.graph.edge_cost(s, n);
                if c.is_finite() {
                    best = best.min(c + self.g[self.graph.id(n)]);
                }
            }
            self.rhs[id] = best;
        }
        if self.g[id] != self.rhs[id] {
            let key = self.calculate_key(s);
            self.push(id, key);
        } else {
            self.queued[id] = None;
        }
    }

    pub fn compute_shortest_path(&mut self) -> PlanStatus {
        let status = self.search();
        self.status = Some(status);
        status
    }

    fn search(&mut self) -> PlanStatus {
        if !self.graph.traversable(self.start) || !self.graph.traversable(self.goal) {
            return PlanStatus::Unreachable;
        }
        let start_id = self.graph.id(self.start);
        loop {
            let start_key = self.calculate_key(self.start);
            let Some(top) = self.top() else { break };
            if !top.key.less_than(&start_key) && self.g[start_id] == self.rhs[start_id] {
                break;
            }
            let u = self.graph.cell(top.id);
            let k_new = self.calculate_key(u);
            if top.key.less_than(&k_new) {
                self.push(top.id, k_new);
                continue;
            }
            self.queue.pop();
            self.queued[top.id] = None;
            if self.record_expansions {
                self.expanded.push(u);
            }
            let neighbors: Vec<Cell> = self.graph.neighbors(u).collect();
            if self.g[top.id] > self.rhs[top.id] {
                self.g[top.id] = self.rhs[top.id];
            } else {
                self.g[top.id] = f64::INFINITY;
                self.update_vertex(u);
            }
            for n in neighbors {
                self.update_vertex(n);
            }
        }
        if self.g[start_id].is_finite() {
            PlanStatus::Found
        } else {
            PlanStatus::Unreachable
        }
    }

    /// Cost of the current shortest path in cells (∞ when unreachable).
    pub fn path_cost(&self) -> f64 {
        self.g(self.start)
    }

    /// Greedy descent from the start along `c(s, s') + g(s')`.
    pub fn extract_path(&self) -> Result<Vec<Cell>> {
        match self.status {
            Some(PlanStatus::Found) => {}
            Some(PlanStatus::Unreachable) => return Err(Error::InvalidState("no path to the goal".into())),
            None => return Err(Error::InvalidState("compute_shortest_path has not run".into())),
        }
        let mut path = vec![self.start];
        let mut s = self.start;
        let limit = self.graph.width * self.graph.height;
        while s != self.goal {
            let mut best: Option<(f64, usize, Cell)> = None;
            for n in self.graph.neighbors(s) {
                let v = self.graph.edge_cost(s, n) + self.g(n);
                if !v.is_finite() {
                    continue;
                }
                let id = self.graph.id(n);
                let better = match best {
                    None => true,
                    Some((bv, bid, _)) => v < bv || (v == bv && id < bid),
                };
                if better {
                    best = Some((v, id, n));
                }
            }
            let (_, _, next) = best.ok_or_else(|| Error::InvalidState("path descent hit a dead end".into()))?;
            s = next;
            path.push(s);
            if path.len() > limit {
                return Err(Error::InvalidState("path descent did not terminate".into()));
            }
        }
        Ok(path)
    }

    /// Moves the robot's start cell; queued keys stay valid through `k_m`.
    pub fn update_start(&mut self, start: Cell) -> Result<()> {
        if !self.graph.contains(start) {
            return Err(Error::InvalidArgument("start outside grid".into()));
        }
        self.start = start;
        Ok(())
    }

    /// Applies traversability changes for `changed` cells and repairs the
    /// affected vertices. Call [`compute_shortest_path`](Self::compute_shortest_path) afterwards.
    pub fn apply_cost_changes(&mut self, changed: &[(Cell, bool)]) {
        self.k_m += heuristic(self.last_start, self.start);
        self.last_start = self.start;
        let mut touched = Vec::new();
        for &(cell, free) in changed {
            if !self.graph.contains(cell) || self.graph.traversable(cell) == free {
                continue;
            }
            self.graph.set_traversable(cell, free);
            let id = self.graph.id(cell);
            if !free {
                // blocked cells are never expanded: settle them directly
                self.g[id] = f64::INFINITY;
                if cell != self.goal {
                    self.rhs[id] = f64::INFINITY;
                }
                self.queued[id] = None;
            }
            touched.push(cell);
            touched.extend(self.graph.neighbors(cell));
        }
        touched.sort_unstable_by_key(|&(x, y)| (y, x));
        touched.dedup();
        for c in touched {
            if self.graph.traversable(c) {
                self.update_vertex(c);
            }
        }
    }

    /// Replans after the robot moved to `start` and `changed` cells flipped.
    pub fn replan(&mut self, start: Cell, changed: &[(Cell, bool)]) -> Result<PlanStatus> {
        self.update_start(start)?;
        self.apply_cost_changes(changed);
        Ok(self.compute_shortest_path())
    }

    /// Diffs the planner's view against `map` and replans from `start`.
    pub fn sync_with(&mut self, map: &Costmap, start: Cell) -> Result<(Vec<Cell>, PlanStatus)> {
        if map.spec.width != self.graph.width || map.spec.height != self.graph.height {
            return Err(Error::InvalidArgument("costmap size differs from planner grid".into()));
        }
        let mut changed = Vec::new();
        for (i, &c) in map.cells.iter().enumerate() {
            let free = c < OCCUPIED;
            if free != self.graph.free[i] {
                changed.push((self.graph.cell(i), free));
            }
        }
        let status = self.replan(start, &changed)?;
        Ok((changed.into_iter().map(|(c, _)| c).collect(), status))
    }
}

/// Path export: one `x y` line per waypoint (cell centres in world coordinates).
pub fn path_to_text(points: &[[f64; 2]]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{} {}", p[0], p[1]);
    }
    out
}
