//! Scan-to-scan LiDAR odometry: smoothness-based edge/planar features,
//! point-to-line and point-to-patch correspondences, and LM motion estimation.

mod features;
mod registration;
mod transform;

pub use features::{extract_features, smoothness, Feature, FeatureSet, ReferenceCloud, Scan};
pub use registration::{
    estimate_motion, find_correspondences, robust_weights, point_to_line_distance, point_to_plane_distance, register, Correspondence,
    Registration,
};
pub use transform::RigidTransform3;

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::lm::LmConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoamConfig {
    /// Neighbours on each side used by the smoothness measure.
    pub neighbors: usize,
    pub subregions: usize,
    pub edges_per_subregion: usize,
    pub planars_per_subregion: usize,
    /// Smallest smoothness accepted as an edge.
    pub edge_threshold: f64,
    /// Largest smoothness accepted as planar.
    pub planar_threshold: f64,
    /// Points closer to the sensor than this are ignored.
    pub min_range: f64,
    /// A neighbourhood is broken (occlusion or missing return) when two
    /// consecutive points are farther apart than this fraction of the range.
    pub gap_ratio: f64,
    /// Maximum distance from a feature to its nearest reference point.
    pub gate: f64,
    /// Search radius for the remaining line/patch points.
    pub support_radius: f64,
    /// Correspondence re-association rounds per registration.
    pub rounds: usize,
    pub min_correspondences: usize,
    /// Initial Tukey scale for reweighted rounds.
    pub robust_scale: f64,
    /// Floor of the Tukey scale; keep it above three times the range noise.
    pub robust_min: f64,
    pub lm: LmConfig,
}

impl Default for LoamConfig {
    fn default() -> Self {
        Self {
            neighbors: 5,
            subregions: 4,
            edges_per_subregion: 2,
            planars_per_subregion: 4,
            edge_threshold: 0.02,
            planar_threshold: 0.005,
            min_range: 0.3,
            gap_ratio: 0.05,
            gate: 0.5,
            support_radius: 1.0,
            rounds: 8,
            min_correspondences: 6,
            robust_scale: 0.1,
            robust_min: 0.002,
            lm: LmConfig::default(),
        }
    }
}

impl LoamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 || self.subregions == 0 {
            return Err(Error::InvalidArgument("neighbors and subregions must be positive".into()));
        }
        if !(self.planar_threshold <= self.edge_threshold) {
            return Err(Error::InvalidArgument("planar threshold must not exceed edge threshold".into()));
        }
        if !(self.gate > 0.0) || !(self.support_radius >= self.gate) {
            return Err(Error::InvalidArgument("gate must be positive and ≤ support radius".into()));
        }
        if !(self.robust_min > 0.0) || !(self.robust_scale >= self.robust_min) {
            return Err(Error::InvalidArgument("robust scales must satisfy 0 < min ≤ scale".into()));
        }
        Ok(())
    }
}

/// Finite-difference velocity of the LiDAR frame between the last two scans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct OdomState {
    /// World-from-LiDAR, identity at the first scan.
    pub pose: RigidTransform3,
    pub velocity: Option<Velocity>,
    pub stamp: Option<f64>,
    /// Motion between the last two registered scans; seeds the next one.
    pub last_step: RigidTransform3,
    reference: Option<ReferenceCloud>,
}

impl Default for OdomState {
    fn default() -> Self {
        Self {
            pose: RigidTransform3::identity(),
            velocity: None,
            stamp: None,
            last_step: RigidTransform3::identity(),
            reference: None,
        }
    }
}

impl OdomState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Planar projection `(x, y, yaw)` of the accumulated pose.
    pub fn planar(&self) -> Pose2 {
        self.pose.planar()
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    /// `stamp x y yaw` with six decimals.
    pub fn log_line(&self) -> String {
        let p = self.planar();
        let mut s = String::new();
        let _ = write!(s, "{:.6} {:.6} {:.6} {:.6}", self.stamp.unwrap_or(0.0), p.x, p.y, p.beta);
        s
    }
}

/// `pose ← pose ∘ step`.
pub fn accumulate(state: &OdomState, step: &RigidTransform3) -> OdomState {
    let mut out = state.clone();
    out.pose = state.pose.compose(step);
    out
}

/// Registers `scan` against the previous one and advances the state.
///
/// The first scan only becomes the reference. On a degenerate registration
/// the pose is held and the old reference kept, so the next scan is matched
/// across the combined motion.
pub fn process_scan(state: &mut OdomState, scan: &Scan, cfg: &LoamConfig) -> Result<Option<RigidTransform3>> {
    cfg.validate()?;
    let reference = ReferenceCloud::from_scan(scan, cfg);
    let Some(prev) = state.reference.as_ref() else {
        state.reference = Some(reference);
        state.stamp = Some(scan.stamp);
        return Ok(None);
    };
    let features = extract_features(scan, cfg);
    let reg = register(&features, prev, &state.last_step, cfg)?;
    let step = reg.transform;
    let dt = state.stamp.map(|s| scan.stamp - s).unwrap_or(0.0);
    if dt > 0.0 {
        state.velocity = Some(Velocity {
            linear: step.translation / dt,
            angular: step.rotation.scaled_axis() / dt,
        });
    }
    *state = accumulate(state, &step);
    state.last_step = step;
    state.stamp = Some(scan.stamp);
    state.reference = Some(reference);
    Ok(Some(step))
}
