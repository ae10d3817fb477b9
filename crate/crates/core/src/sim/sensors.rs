use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PlacedObstacle, Shape};
use crate::geometry::Pose2;
use crate::loam::Scan;
use crate::pointcloud::{Point3, PointCloud3};

/// Spinning multi-ring LiDAR mounted level at the robot centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub rings: usize,
    pub min_elevation: f64,
    pub max_elevation: f64,
    pub points_per_ring: usize,
    pub max_range: f64,
    pub mount_height: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            rings: 16,
            min_elevation: (-15f64).to_radians(),
            max_elevation: 15f64.to_radians(),
            points_per_ring: 900,
            max_range: 10.0,
            mount_height: 1.0,
        }
    }
}

impl LidarSpec {
    pub fn elevation(&self, ring: usize) -> f64 {
        if self.rings == 1 {
            return 0.0;
        }
        self.min_elevation + (self.max_elevation - self.min_elevation) * ring as f64 / (self.rings - 1) as f64
    }

    /// Base-from-sensor transform.
    pub fn mount(&self) -> Isometry3<f64> {
        Isometry3::translation(0.0, 0.0, self.mount_height)
    }
}

/// Pinhole-style depth camera, pitched down by `pitch`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCameraSpec {
    pub name: String,
    /// Mount offset along the robot x axis.
    pub offset: f64,
    pub height: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    /// Angular spacing between rays.
    pub spacing: f64,
    pub max_range: f64,
    /// Beyond this range the noise σ is multiplied by `far_noise_gain`.
    pub reliable_range: f64,
    pub far_noise_gain: f64,
}

impl DepthCameraSpec {
    pub fn front() -> Self {
        Self {
            name: "depth_front".into(),
            offset: 0.2,
            height: 0.6,
            yaw: 0.0,
            pitch: 30f64.to_radians(),
            horizontal_fov: 86f64.to_radians(),
            vertical_fov: 58f64.to_radians(),
            spacing: 1.5f64.to_radians(),
            max_range: 5.0,
            reliable_range: 3.0,
            far_noise_gain: 3.0,
        }
    }

    pub fn rear() -> Self {
        Self {
            name: "depth_rear".into(),
            offset: -0.2,
            yaw: std::f64::consts::PI,
            ..Self::front()
        }
    }

    /// Base-from-camera transform; the camera x axis looks along the ray fan centre.
    pub fn mount(&self) -> Isometry3<f64> {
        let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, self.yaw) * UnitQuaternion::from_euler_angles(0.0, self.pitch, 0.0);
        Isometry3::from_parts(Translation3::new(self.offset, 0.0, self.height), rot)
    }

    fn steps(fov: f64, spacing: f64) -> impl Iterator<Item = f64> {
        let n = (fov / spacing).floor() as i64;
        let start = -(n as f64) * spacing / 2.0;
        (0..=n).map(move |k| start + k as f64 * spacing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub lidar: LidarSpec,
    pub cameras: Vec<DepthCameraSpec>,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            lidar: LidarSpec::default(),
            cameras: vec![DepthCameraSpec::front(), DepthCameraSpec::rear()],
        }
    }
}

/// Gaussian range noise; `sigma == 0` draws nothing from the generator.
pub struct RangeNoise<'a> {
    pub sigma: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl RangeNoise<'_> {
    fn perturb(&mut self, range: f64, gain: f64) -> f64 {
        if self.sigma == 0.0 {
            return range;
        }
        let n: f64 = self.rng.sample(StandardNormal);
        range + self.sigma * gain * n
    }
}

/// `[t_in, t_out]` where the horizontal projection of the ray lies inside the footprint.
fn footprint_interval(o: &Vector3<f64>, d: &Vector3<f64>, shape: &Shape, c: [f64; 2]) -> Option<(f64, f64)> {
    let (px, py) = (o.x - c[0], o.y - c[1]);
    match *shape {
        Shape::Circle { radius } => {
            let a = d.x * d.x + d.y * d.y;
            let b = px * d.x + py * d.y;
            let cc = px * px + py * py - radius * radius;
            if a < 1e-18 {
                return (cc <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
            }
            let disc = b * b - a * cc;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            Some(((-b - s) / a, (-b + s) / a))
        }
        Shape::Box { w, h } => {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for (p, dv, half) in [(px, d.x, w / 2.0), (py, d.y, h / 2.0)] {
                if dv.abs() < 1e-18 {
                    if p.abs() > half {
                        return None;
                    }
                } else {
                    let t0 = (-half - p) / dv;
                    let t1 = (half - p) / dv;
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
            }
            (lo <= hi).then_some((lo, hi))
        }
    }
}

/// Distance along the unit ray to the first surface: extruded obstacles,
/// and optionally the ground plane `z = 0`. Rays starting inside a solid see
/// nothing of that solid.
pub(crate) fn cast_ray(o: &Vector3<f64>, d: &Vector3<f64>, obstacles: &[PlacedObstacle], ground: bool, max_range: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    if ground && d.z < 0.0 && o.z > 0.0 {
        best = -o.z / d.z;
    }
    for ob in obstacles {
        let Some((a0, a1)) = footprint_interval(o, d, &ob.shape, ob.center) else {
            continue;
        };
        let (z0, z1) = if d.z.abs() < 1e-18 {
            if o.z < 0.0 || o.z > ob.height {
                continue;
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let t0 = -o.z / d.z;
            let t1 = (ob.height - o.z) / d.z;
            (t0.min(t1), t0.max(t1))
        };
        let t_in = a0.max(z0);
        let t_out = a1.min(z1);
        if t_in <= t_out && t_in > 0.0 && t_in < best {
            best = t_in;
        }
    }
    (best <= max_range).then_some(best)
}

fn world_from_base(pose: &Pose2) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(pose.x, pose.y, 0.0),
        UnitQuaternion::from_euler_angles(0.0, 0.0, pose.beta),
    )
}

/// One LiDAR sweep in the sensor frame: rings bottom to top, each ordered by
/// azimuth from −π. Rays without a hit within range produce no point.
pub fn simulate_lidar(
    spec: &LidarSpec,
    obstacles: &[PlacedObstacle],
    pose: &Pose2,
    stamp: f64,
    index: u64,
    noise: &mut RangeNoise<'_>,
) -> (Scan, PointCloud3) {
    let tf = world_from_base(pose) * spec.mount();
    let origin = tf.translation.vector;
    let mut rings = Vec::with_capacity(spec.rings);
    for r in 0..spec.rings {
        let (se, ce) = spec.elevation(r).sin_cos();
        let mut ring = Vec::new();
        for k in 0..spec.points_per_ring {
            let az = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / spec.points_per_ring as f64;
            let (sa, ca) = az.sin_cos();
            let local = Vector3::new(ce * ca, ce * sa, se);
            let dir = tf.rotation * local;
            if let Some(range) = cast_ray(&origin, &dir, obstacles, true, spec.max_range) {
                let range = noise.perturb(range, 1.0);
                ring.push(Point3::from(local * range));
            }
        }
        rings.push(ring);
    }
    let cloud = PointCloud3::new("lidar", stamp, rings.iter().flatten().copied().collect()).expect("frame id");
    (Scan::new(rings, stamp, index), cloud)
}

/// Dense depth image as a point cloud in the camera frame, ground included.
pub fn simulate_depth(
    cam: &DepthCameraSpec,
    obstacles: &[PlacedObstacle],
    pose: &Pose2,
    stamp: f64,
    noise: &mut RangeNoise<'_>,
) -> PointCloud3 {
    let tf = world_from_base(pose) * cam.mount();
    let origin = tf.translation.vector;
    let mut points = Vec::new();
    for va in DepthCameraSpec::steps(cam.vertical_fov, cam.spacing) {
        let (sv, cv) = va.sin_cos();
        for ha in DepthCameraSpec::steps(cam.horizontal_fov, cam.spacing) {
            let (sh, ch) = ha.sin_cos();
            let local = Vector3::new(cv * ch, cv * sh, sv);
            let dir = tf.rotation * local;
            if let Some(range) = cast_ray(&origin, &dir, obstacles, true, cam.max_range) {
                let gain = if range > cam.reliable_range { cam.far_noise_gain } else { 1.0 };
                points.push(Point3::from(local * noise.perturb(range, gain)));
            }
        }
    }
    PointCloud3::new(cam.name.clone(), stamp, points).expect("camera name")
}
