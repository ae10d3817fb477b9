//! Simulated LiDAR scans in a fixed room for odometry checks.

use navstack::geometry::Pose2;
use navstack::loam::{RigidTransform3, Scan};
use navstack::sim::{simulate_lidar, LidarSpec, PlacedObstacle, RangeNoise, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Walled 8 m room with a few pillars and crates.
pub fn room() -> Vec<PlacedObstacle> {
    let bx = |id: &str, x: f64, y: f64, w: f64, h: f64| PlacedObstacle {
        id: id.into(),
        shape: Shape::Box { w, h },
        height: 2.0,
        center: [x, y],
    };
    let cyl = |id: &str, x: f64, y: f64| PlacedObstacle {
        id: id.into(),
        shape: Shape::Circle { radius: 0.15 },
        height: 2.0,
        center: [x, y],
    };
    vec![
        bx("s", 0.0, -4.05, 8.2, 0.1),
        bx("n", 0.0, 4.05, 8.2, 0.1),
        bx("w", -4.05, 0.0, 0.1, 8.2),
        bx("e", 4.05, 0.0, 0.1, 8.2),
        bx("crate", 2.0, 1.5, 0.5, 1.0),
        bx("crate2", -2.2, -1.0, 0.8, 0.4),
        cyl("p1", -1.0, 2.0),
        cyl("p2", 1.0, -2.0),
    ]
}

pub fn scan_at(pose: &Pose2, index: u64) -> Scan {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut noise = RangeNoise { sigma: 0.0, rng: &mut rng };
    simulate_lidar(&LidarSpec::default(), &room(), pose, index as f64 * 0.1, index, &mut noise).0
}

pub fn planar_error(t: &RigidTransform3, expect: &Pose2) -> (f64, f64) {
    let p = t.planar();
    let dr = (p.x - expect.x).hypot(p.y - expect.y).hypot(t.translation.z);
    let e = RigidTransform3::from_planar(expect.x, expect.y, expect.beta);
    let da = (e.rotation.inverse() * t.rotation).angle();
    (dr, da)
}
