//! Layered 2D costmaps.
//!
//! The global map is binary (free / occupied) and only ever accumulates LiDAR
//! detections. The local map is a robot-centred rolling window rebuilt from
//! both sensors each cycle and then inflated.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::pointcloud::PointCloud3;

pub const FREE: u8 = 0;
pub const OCCUPIED: u8 = 254;
/// Peak cost of an inflated cell (adjacent to an obstacle at zero distance).
pub const INFLATED_PEAK: f64 = 253.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(resolution: f64, origin_x: f64, origin_y: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("grid must be at least 1×1".into()));
        }
        Ok(Self {
            resolution,
            origin_x,
            origin_y,
            width,
            height,
        })
    }

    /// Cell (col, row) containing world point `p`.
    pub fn world_to_cell(&self, p: [f64; 2]) -> Result<(usize, usize)> {
        self.try_cell(p).ok_or(Error::OutOfBounds { x: p[0], y: p[1] })
    }

    pub fn try_cell(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let col = ((p[0] - self.origin_x) / self.resolution).floor();
        let row = ((p[1] - self.origin_y) / self.resolution).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 || col.is_nan() || row.is_nan() {
            return None;
        }
        Some((col as usize, row as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin_x + (col as f64 + 0.5) * self.resolution,
            self.origin_y + (row as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Global,
    Local,
}

impl MapKind {
    fn as_str(self) -> &'static str {
        match self {
            MapKind::Global => "global",
            MapKind::Local => "local",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationConfig {
    pub inflation_radius: f64,
    pub robot_radius: f64,
}

impl Default for InflationConfig {
    fn default() -> Self {
        Self {
            inflation_radius: 0.55,
            robot_radius: 0.25,
        }
    }
}

impl InflationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.robot_radius > 0.0) || !(self.inflation_radius >= self.robot_radius) {
            return Err(Error::InvalidArgument(
                "need inflation_radius >= robot_radius > 0".into(),
            ));
        }
        Ok(())
    }

    /// Linear decay from 253 at the obstacle to 1 at the radius.
    pub fn cost_at(&self, d: f64) -> u8 {
        (INFLATED_PEAK * (1.0 - d / self.inflation_radius)).round().max(1.0) as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub spec: GridSpec,
    pub cells: Vec<u8>,
    pub kind: MapKind,
}

impl Costmap {
    pub fn new(spec: GridSpec, kind: MapKind) -> Self {
        Self {
            cells: vec![FREE; spec.len()],
            spec,
            kind,
        }
    }

    /// A `size`×`size` metre window centred on `center`, snapped to whole cells.
    pub fn local_window(center: [f64; 2], size: f64, resolution: f64) -> Result<Self> {
        let n = (size / resolution).round() as usize;
        let spec = GridSpec::new(resolution, 0.0, 0.0, n, n)?;
        let mut map = Self::new(spec, MapKind::Local);
        map.recenter(center);
        Ok(map)
    }

    pub fn cost(&self, col: usize, row: usize) -> u8 {
        self.cells[self.spec.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, cost: u8) {
        let i = self.spec.index(col, row);
        self.cells[i] = cost;
    }

    pub fn cost_at_world(&self, p: [f64; 2]) -> Option<u8> {
        self.spec.try_cell(p).map(|(c, r)| self.cost(c, r))
    }

    pub fn is_occupied(&self, col: usize, row: usize) -> bool {
        self.cost(col, row) == OCCUPIED
    }

    pub fn clear(&mut self) {
        self.cells.fill(FREE);
    }

    /// Moves the window so it is centred on `center`, with the origin on a
    /// multiple of the resolution so cell boundaries stay fixed in the world.
    pub fn recenter(&mut self, center: [f64; 2]) {
        let res = self.spec.resolution;
        let half_w = self.spec.width as f64 * res / 2.0;
        let half_h = self.spec.height as f64 * res / 2.0;
        self.spec.origin_x = ((center[0] - half_w) / res).round() * res;
        self.spec.origin_y = ((center[1] - half_h) / res).round() * res;
    }

    /// Projects every point onto the grid and marks its cell occupied.
    /// Returns the cells that changed from non-occupied to occupied.
    pub fn mark_obstacles(&mut self, obstacles: &PointCloud3) -> Vec<(usize, usize)> {
        let mut changed = Vec::new();
        for p in &obstacles.points {
            if let Some((c, r)) = self.spec.try_cell([p.x, p.y]) {
                let i = self.spec.index(c, r);
                if self.cells[i] != OCCUPIED {
                    self.cells[i] = OCCUPIED;
                    changed.push((c, r));
                }
            }
        }
        changed
    }

    /// Raises every free cell within the inflation radius of an occupied cell
    /// to the linear-decay cost of its distance to the nearest obstacle.
    pub fn inflate(&mut self, cfg: &InflationConfig) -> Result<()> {
        if self.kind != MapKind::Local {
            return Err(Error::KindMismatch { expected: "local" });
        }
        cfg.validate()?;
        let res = self.spec.resolution;
        let reach = (cfg.inflation_radius / res).floor() as isize;
        let (w, h) = (self.spec.width as isize, self.spec.height as isize);
        let occupied: Vec<(isize, isize)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (c, r)))
            .filter(|&(c, r)| self.cells[(r * w + c) as usize] == OCCUPIED)
            .collect();
        let mut stamp = Vec::new();
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let d = res * ((dc * dc + dr * dr) as f64).sqrt();
                if (dc, dr) != (0, 0) && d <= cfg.inflation_radius {
                    stamp.push((dc, dr, cfg.cost_at(d)));
                }
            }
        }
        for (c, r) in occupied {
            for &(dc, dr, cost) in &stamp {
                let (cc, rr) = (c + dc, r + dr);
                if cc < 0 || rr < 0 || cc >= w || rr >= h {
                    continue;
                }
                let cell = &mut self.cells[(rr * w + cc) as usize];
                if *cell != OCCUPIED && cost > *cell {
                    *cell = cost;
                }
            }
        }
        Ok(())
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.spec.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == OCCUPIED)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Snapshot text: field-name line, value line, then one line of
    /// comma-separated row-major costs.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::with_capacity(self.cells.len() * 3 + 64);
        let _ = writeln!(out, "res,origin_x,origin_y,width,height,kind");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.resolution,
            s.origin_x,
            s.origin_y,
            s.width,
            s.height,
            self.kind.as_str()
        );
        for (i, v) in self.cells.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        if lines.next() != Some("res,origin_x,origin_y,width,height,kind") {
            return Err(perr(1, "missing costmap header"));
        }
        let vals: Vec<&str> = lines.next().ok_or(perr(2, "missing grid values"))?.split(',').collect();
        if vals.len() != 6 {
            return Err(perr(2, "expected six header values"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| perr(2, "bad number"));
        let u = |s: &str| s.parse::<usize>().map_err(|_| perr(2, "bad size"));
        let spec = GridSpec::new(f(vals[0])?, f(vals[1])?, f(vals[2])?, u(vals[3])?, u(vals[4])?)?;
        let kind = match vals[5] {
            "global" => MapKind::Global,
            "local" => MapKind::Local,
            _ => return Err(perr(2, "kind must be global or local")),
        };
        let cells: Vec<u8> = lines
            .next()
            .ok_or(perr(3, "missing cells"))?
            .split(',')
            .map(|v| v.parse::<u8>().map_err(|_| perr(3, "bad cost")))
            .collect::<Result<_>>()?;
        if cells.len() != spec.len() {
            return Err(perr(3, "cell count does not match width×height"));
        }
        Ok(Self { spec, cells, kind })
    }
}

/// Adds LiDAR obstacles (already in the world frame) to the global map.
/// Returns newly occupied cells.
pub fn update_global(global: &mut Costmap, lidar_obstacles: &PointCloud3) -> Vec<(usize, usize)> {
    global.mark_obstacles(lidar_obstacles)
}

/// Rebuilds the local window around `robot_pose` from both sources, then inflates.
pub fn update_local(
    local: &mut Costmap,
    lidar_obstacles: &PointCloud3,
    depth_obstacles: &PointCloud3,
    robot_pose: &Pose2,
    inflation: &InflationConfig,
) -> Result<()> {
    local.clear();
    local.recenter(robot_pose.position());
    local.mark_obstacles(lidar_obstacles);
    local.mark_obstacles(depth_obstacles);
    local.inflate(inflation)
}

/// One combined mapping cycle: global from LiDAR only, local from both.
pub fn update_from_detections(
    global: &Costmap,
    local: &Costmap,
    lidar_obstacles: &PointCloud3,
    depth_obstacles: &PointCloud3,
    robot_pose: &Pose2,
    inflation: &InflationConfig,
) -> Result<(Costmap, Costmap)> {
    if global.kind != MapKind::Global {
        return Err(Error::KindMismatch { expected: "global" });
    }
    let mut g = global.clone();
    let mut l = local.clone();
    update_global(&mut g, lidar_obstacles);
    update_local(&mut l, lidar_obstacles, depth_obstacles, robot_pose, inflation)?;
    Ok((g, l))
}
