//! Band seeding from a global path, warm starts and command extraction.

use super::constraints::{raw, raw_velocity};
use super::{TebBand, TebConfig};
use crate::costmap::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};

/// Axis-aligned region the band must stay in (the local map extent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandWindow {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BandWindow {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn from_grid(spec: &GridSpec) -> Self {
        Self {
            min: [spec.origin_x, spec.origin_y],
            max: [
                spec.origin_x + spec.width as f64 * spec.resolution,
                spec.origin_y + spec.height as f64 * spec.resolution,
            ],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    /// Point where the segment from inside point `a` to outside point `b`
    /// leaves the window.
    fn exit_point(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut t: f64 = 1.0;
        for i in 0..2 {
            let d = b[i] - a[i];
            if d > 0.0 {
                t = t.min((self.max[i] - a[i]) / d);
            } else if d < 0.0 {
                t = t.min((self.min[i] - a[i]) / d);
            }
        }
        let t = t.clamp(0.0, 1.0);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Seeds a band from the global path.
///
/// The band starts at `current`, follows the path from its point nearest the
/// robot, and ends at the goal when the goal lies in the window or at the
/// point where the path leaves it. Poses are `ref_spacing` apart with tangent
/// headings; each interval assumes half the speed limit.
pub fn initialize_band(
    path: &[[f64; 2]],
    current: Pose2,
    goal: Pose2,
    window: &BandWindow,
    cfg: &TebConfig,
) -> Result<TebBand> {
    cfg.validate()?;
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty global path".into()));
    }
    if !window.contains(current.position()) {
        return Err(Error::WindowMismatch);
    }
    let start = current.position();
    let nearest = path
        .iter()
        .enumerate()
        .min_by(|a, b| dist(*a.1, start).total_cmp(&dist(*b.1, start)))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut poly = vec![start];
    let mut reaches_goal = true;
    for p in &path[nearest + 1..] {
        let last = *poly.last().expect("polyline starts with the robot");
        if !window.contains(*p) {
            poly.push(window.exit_point(last, *p));
            reaches_goal = false;
            break;
        }
        poly.push(*p);
    }
    if reaches_goal {
        // The path ends at the goal cell centre; end exactly on the goal, or
        // where the way to it leaves the window when the cell centre is
        // inside but the goal itself is not.
        if poly.len() > 1 {
            poly.pop();
        }
        let last = *poly.last().expect("polyline starts with the robot");
        if window.contains(goal.position()) {
            poly.push(goal.position());
        } else {
            poly.push(window.exit_point(last, goal.position()));
            reaches_goal = false;
        }
    }
    poly.dedup_by(|b, a| dist(*a, *b) < 1e-9);

    let seg_len: Vec<f64> = poly.windows(2).map(|w| dist(w[0], w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let heading_of = |i: usize| {
        let (a, b) = (poly[i], poly[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    };

    let mut poses = vec![current];
    let mut s = cfg.ref_spacing;
    let mut seg = 0;
    let mut seg_start = 0.0;
    while s < total - 0.5 * cfg.ref_spacing {
        while seg + 1 < seg_len.len() && seg_start + seg_len[seg] < s {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let t = ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0);
        let (a, b) = (poly[seg], poly[seg + 1]);
        poses.push(Pose2::new(
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            heading_of(seg),
        ));
        s += cfg.ref_spacing;
    }
    let end = *poly.last().expect("non-empty polyline");
    let end_pose = if reaches_goal {
        goal
    } else {
        Pose2::new(end[0], end[1], if seg_len.is_empty() { current.beta } else { heading_of(seg_len.len() - 1) })
    };
    poses.push(end_pose);

    let intervals = poses
        .windows(2)
        .map(|w| (w[0].distance_to(&w[1]) / (0.5 * cfg.v_max)).max(cfg.dt_min))
        .collect();
    Ok(TebBand {
        poses,
        intervals,
        final_velocity: reaches_goal.then_some(0.0),
    })
}

/// Reuses a previous band: drops poses the robot has passed or nearly
/// reached, pins the first pose to `current` and the last to `end`.
pub fn warm_start(band: &TebBand, current: Pose2, end: Pose2, final_velocity: Option<f64>, cfg: &TebConfig) -> TebBand {
    let p = current.position();
    let n = band.poses.len();
    let nearest = (0..n - 1)
        .min_by(|a, b| dist(band.poses[*a].position(), p).total_cmp(&dist(band.poses[*b].position(), p)))
        .unwrap_or(0);
    let mut poses = band.poses[nearest..].to_vec();
    let mut intervals = band.intervals[nearest..].to_vec();
    poses[0] = current;
    let last = poses.len() - 1;
    poses[last] = end;
    // A pose crowding the robot makes the first segment near-stationary,
    // and the optimizer rarely pulls it free again.
    let mut reseed = poses.len() == 2;
    while poses.len() > 2 && current.distance_to(&poses[1]) < 0.5 * cfg.ref_spacing {
        poses.remove(1);
        intervals.remove(0);
        reseed = true;
    }
    if reseed {
        intervals[0] = (current.distance_to(&poses[1]) / (0.5 * cfg.v_max)).max(cfg.dt_min);
    }
    TebBand {
        poses,
        intervals,
        final_velocity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub v: f64,
    pub omega: f64,
}

impl Command {
    pub const STOP: Command = Command { v: 0.0, omega: 0.0 };
}

/// Velocity of the first band segment, saturated to the limits. A band older
/// than two control periods yields a stop command.
pub fn extract_command(band: &TebBand, cfg: &TebConfig, band_stamp: f64, now: f64, control_period: f64) -> Command {
    if now - band_stamp > 2.0 * control_period + 1e-9 || band.poses.len() < 2 {
        return Command::STOP;
    }
    let (v, w) = raw_velocity(&raw(&band.poses[0]), &raw(&band.poses[1]), band.intervals[0], cfg.kappa);
    if !v.is_finite() || !w.is_finite() {
        return Command::STOP;
    }
    Command {
        v: v.clamp(-cfg.v_max, cfg.v_max),
        omega: normalize_angle(w).clamp(-cfg.omega_max, cfg.omega_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> BandWindow {
        BandWindow::new([-2.0, -2.0], [2.0, 2.0])
    }

    fn line(n: usize, step: f64) -> Vec<[f64; 2]> {
        (0..n).map(|i| [i as f64 * step, 0.0]).collect()
    }

    #[test]
    fn straight_path_gives_evenly_spaced_poses() {
        let cfg = TebConfig::default();
        let band = initialize_band(
            &line(41, 0.05),
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(2.0, 0.0, 0.0),
            &window(),
            &cfg,
        )
        .unwrap();
        assert_eq!(band.poses.len(), 9);
        assert!(band.poses.iter().all(|p| p.beta == 0.0));
        assert_eq!(band.poses[8], Pose2::new(2.0, 0.0, 0.0));
        assert!(band.intervals.iter().all(|dt| (dt - 0.25 / (0.5 * cfg.v_max)).abs() < 1e-12));
        assert_eq!(band.final_velocity, Some(0.0));
    }

    #[test]
    fn short_path_gives_two_poses() {
        let band = initialize_band(
            &[[0.0, 0.0], [0.1, 0.0]],
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(0.1, 0.0, 0.3),
            &window(),
            &TebConfig::default(),
        )
        .unwrap();
        assert_eq!(band.poses.len(), 2);
        assert_eq!(band.poses[1], Pose2::new(0.1, 0.0, 0.3));
    }

    #[test]
    fn band_ends_where_path_leaves_window() {
        let band = initialize_band(
            &line(100, 0.05),
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(4.95, 0.0, 0.0),
            &window(),
            &TebConfig::default(),
        )
        .unwrap();
        let last = band.poses.last().unwrap();
        assert!((last.x - 2.0).abs() < 1e-9 && last.y.abs() < 1e-12);
        assert_eq!(band.final_velocity, None);
    }

    #[test]
    fn robot_outside_window_is_rejected() {
        let r = initialize_band(
            &line(3, 0.1),
            Pose2::new(5.0, 0.0, 0.0),
            Pose2::new(0.2, 0.0, 0.0),
            &window(),
            &TebConfig::default(),
        );
        assert_eq!(r, Err(Error::WindowMismatch));
    }

    #[test]
    fn goal_just_outside_window_ends_on_the_border() {
        // Last path cell centre inside the window, goal 0.05 m beyond it.
        let path: Vec<[f64; 2]> = (0..21).map(|i| [i as f64 * 0.1, 0.0]).collect();
        let band = initialize_band(
            &path,
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(2.05, 0.0, 0.0),
            &window(),
            &TebConfig::default(),
        )
        .unwrap();
        let last = band.poses.last().unwrap();
        assert!((last.x - 2.0).abs() < 1e-9);
        assert_eq!(band.final_velocity, None);
    }

    #[test]
    fn warm_start_prunes_poses_crowding_the_robot() {
        let cfg = TebConfig::default();
        let band = TebBand::new(
            vec![
                Pose2::new(0.0, 0.0, 0.0),
                Pose2::new(0.003, 0.0, 0.0),
                Pose2::new(0.25, 0.0, 0.0),
                Pose2::new(0.5, 0.0, 0.0),
            ],
            vec![0.4, 0.3, 0.3],
        )
        .unwrap();
        let w = warm_start(&band, Pose2::new(0.0, 0.0, 0.0), Pose2::new(0.5, 0.0, 0.0), None, &cfg);
        assert_eq!(w.poses.len(), 3);
        assert!((w.poses[1].x - 0.25).abs() < 1e-12);
        assert!((w.intervals[0] - 0.25 / (0.5 * cfg.v_max)).abs() < 1e-12);
    }

    #[test]
    fn stale_band_stops_the_robot() {
        let cfg = TebConfig::default();
        let band = TebBand::new(vec![Pose2::new(0.0, 0.0, 0.0), Pose2::new(0.25, 0.0, 0.0)], vec![0.5]).unwrap();
        let fresh = extract_command(&band, &cfg, 1.0, 1.1, 0.1);
        assert!(fresh.v > 0.0);
        assert_eq!(extract_command(&band, &cfg, 1.0, 1.25, 0.1), Command::STOP);
    }

    #[test]
    fn warm_start_drops_passed_poses() {
        let cfg = TebConfig::default();
        let band = TebBand::new(
            (0..5).map(|k| Pose2::new(k as f64 * 0.25, 0.0, 0.0)).collect(),
            vec![0.25; 4],
        )
        .unwrap();
        let out = warm_start(&band, Pose2::new(0.5, 0.01, 0.0), Pose2::new(1.0, 0.0, 0.0), None, &cfg);
        assert_eq!(out.poses.len(), 3);
        assert_eq!(out.poses[0], Pose2::new(0.5, 0.01, 0.0));
    }
}
