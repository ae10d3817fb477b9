//! Sensor frames to obstacle points in the robot base frame.

use nalgebra::Isometry3;

use crate::error::Result;
use crate::loam::Scan;
use crate::pointcloud::{fuse, passthrough_filter, range_filter, voxel_filter, FilterConfig, FrameTransforms, Point3, PointCloud3};
use crate::segmentation::{fit_plane_ransac, PlaneModel, RansacConfig};
use crate::sim::SensorSpec;

pub const BASE_FRAME: &str = "base";

/// Everything the sensors produced at one instant.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    pub tick: u64,
    pub stamp: f64,
    pub scan: Scan,
    pub lidar: PointCloud3,
    pub depth: Vec<PointCloud3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionConfig {
    pub depth: FilterConfig,
    pub ransac: RansacConfig,
    /// A depth plane is accepted as ground only when its normal is within
    /// this angle of vertical and it passes within `max_ground_offset` of z = 0.
    pub max_ground_tilt: f64,
    pub max_ground_offset: f64,
    pub lidar_voxel: f64,
    pub lidar_max_range: f64,
    /// LiDAR returns below this height are treated as ground.
    pub lidar_min_height: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            depth: FilterConfig::default(),
            ransac: RansacConfig::default(),
            max_ground_tilt: 10f64.to_radians(),
            max_ground_offset: 0.1,
            lidar_voxel: 0.05,
            lidar_max_range: 10.0,
            lidar_min_height: 0.1,
        }
    }
}

/// Obstacle points in the base frame.
#[derive(Debug, Clone)]
pub struct Detections {
    pub stamp: f64,
    pub lidar: PointCloud3,
    pub depth: PointCloud3,
    /// Ground plane found in the depth data, if any.
    pub ground: Option<PlaneModel>,
}

pub fn mount_transforms(sensors: &SensorSpec) -> FrameTransforms {
    let mut tf = FrameTransforms::new();
    tf.insert("lidar".into(), sensors.lidar.mount());
    for cam in &sensors.cameras {
        tf.insert(cam.name.clone(), cam.mount());
    }
    tf
}

fn is_ground(plane: &PlaneModel, cfg: &PerceptionConfig) -> bool {
    let n = plane.normal();
    n.z.abs() >= cfg.max_ground_tilt.cos() && (plane.d / n.norm()).abs() <= cfg.max_ground_offset
}

/// Depth: fuse → range → pass-through → voxel → RANSAC, keeping the outliers.
/// If RANSAC locks onto something other than the floor (a wall filling the
/// view), points above the pass-through height are kept instead.
/// LiDAR: range → voxel → height cut.
pub fn detect(frame: &SensorFrame, sensors: &SensorSpec, cfg: &PerceptionConfig, seed: u64) -> Result<Detections> {
    let transforms = mount_transforms(sensors);
    let origin = Point3::origin();

    let lidar = fuse(std::slice::from_ref(&frame.lidar), BASE_FRAME, &transforms)?;
    let lidar = range_filter(&lidar, &origin, cfg.lidar_max_range)?;
    let lidar = voxel_filter(&lidar, cfg.lidar_voxel)?;
    let mut lidar = passthrough_filter(&lidar, cfg.lidar_min_height);
    lidar.stamp = frame.stamp;

    let depth = fuse(&frame.depth, BASE_FRAME, &transforms)?;
    let depth = range_filter(&depth, &origin, cfg.depth.max_range)?;
    let depth = passthrough_filter(&depth, cfg.depth.min_height);
    let depth = voxel_filter(&depth, cfg.depth.voxel_leaf)?;
    let ransac = RansacConfig {
        rng_seed: seed,
        ..cfg.ransac
    };
    let (mut obstacles, ground) = match fit_plane_ransac(&depth, &ransac) {
        Ok(seg) if is_ground(&seg.plane, cfg) => (seg.obstacles, Some(seg.plane)),
        _ => {
            let cut = cfg.ransac.distance_threshold;
            let pts = depth.points.iter().filter(|p| p.z > cut).copied().collect();
            (PointCloud3::new(BASE_FRAME, frame.stamp, pts)?, None)
        }
    };
    // Outliers below the floor are noise, not obstacles.
    obstacles.points.retain(|p| p.z > 0.0);
    obstacles.stamp = frame.stamp;

    Ok(Detections {
        stamp: frame.stamp,
        lidar,
        depth: obstacles,
        ground,
    })
}

/// Planar world coordinates of base-frame points seen from `pose`.
pub fn to_world(cloud: &PointCloud3, pose: &crate::geometry::Pose2) -> PointCloud3 {
    let iso = Isometry3::from_parts(
        nalgebra::Translation3::new(pose.x, pose.y, 0.0),
        nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, pose.beta),
    );
    cloud.transformed(&iso, "world")
}
