//! Synthetic clouds with known labels.

use navstack::pointcloud::{Point3, PointCloud3};
use navstack::segmentation::{fit_plane_ransac, RansacConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Noisy floor (σ_z = 0.01 m) over 6 × 6 m plus three boxes and a pillar
/// standing on it. Ground points come first; returns the ground count.
pub fn planted_ground(seed: u64) -> (PointCloud3, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut points = Vec::new();
    for _ in 0..3000 {
        points.push(Point3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            noise.sample(&mut rng),
        ));
    }
    let ground = points.len();
    for _ in 0..3 {
        let (cx, cy) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
        let (w, h, top) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6), rng.random_range(0.3..1.2));
        for _ in 0..150 {
            // Points on the visible faces and top, from 0.15 m up.
            let z = rng.random_range(0.15..top);
            let (x, y) = match rng.random_range(0..3) {
                0 => (cx - w / 2.0, cy + rng.random_range(-h / 2.0..h / 2.0)),
                1 => (cx + rng.random_range(-w / 2.0..w / 2.0), cy - h / 2.0),
                _ => (cx + rng.random_range(-w / 2.0..w / 2.0), cy + rng.random_range(-h / 2.0..h / 2.0)),
            };
            points.push(Point3::new(x, y, z));
        }
    }
    let (px, py) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    for _ in 0..100 {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        points.push(Point3::new(px + 0.15 * a.cos(), py + 0.15 * a.sin(), rng.random_range(0.15..1.5)));
    }
    (PointCloud3::new("base", 0.0, points).unwrap(), ground)
}

/// Ground recall, obstacle recall and normal tilt in degrees for one seed.
pub fn ransac_trial(seed: u64) -> (f64, f64, f64) {
    let (cloud, n_ground) = planted_ground(seed);
    let cfg = RansacConfig {
        distance_threshold: 0.03,
        rng_seed: seed,
        ..RansacConfig::default()
    };
    let res = fit_plane_ransac(&cloud, &cfg).unwrap();
    let labels_ground: std::collections::HashSet<[u64; 3]> = res
        .ground
        .points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    let is_ground = |p: &Point3| labels_ground.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]);
    let ground_hits = cloud.points[..n_ground].iter().filter(|p| is_ground(p)).count();
    let obstacle_hits = cloud.points[n_ground..].iter().filter(|p| !is_ground(p)).count();
    let n = res.plane.normal();
    let tilt = n.z.abs().min(1.0).acos().to_degrees();
    (
        ground_hits as f64 / n_ground as f64,
        obstacle_hits as f64 / (cloud.len() - n_ground) as f64,
        tilt,
    )
}

/// Uniformly dense cloud: a 2 × 2 m slab, 0.016 m thick, sampled every
/// 0.004 m with a little jitter.
pub fn dense_slab() -> PointCloud3 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = 0.004;
    let mut points = Vec::new();
    for i in 0..500 {
        for j in 0..500 {
            for k in 0..4 {
                let jit = |rng: &mut ChaCha8Rng| rng.random_range(-0.0005..0.0005);
                points.push(Point3::new(
                    0.001 + i as f64 * step + jit(&mut rng),
                    0.001 + j as f64 * step + jit(&mut rng),
                    0.001 + k as f64 * step + jit(&mut rng),
                ));
            }
        }
    }
    PointCloud3::new("base", 0.0, points).unwrap()
}
