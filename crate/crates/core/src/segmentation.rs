//! RANSAC ground-plane fitting and the ground/obstacle split.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud3};

/// Plane `a·x + b·y + c·z + d = 0` with unit normal and `c ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PlaneModel {
    /// Normalizes the coefficients so the normal has unit length, then flips
    /// the sign so the normal points up (c > 0, or b > 0 / a > 0 for vertical planes).
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = (a * a + b * b + c * c).sqrt();
        if !(n > 1e-12) || !n.is_finite() || !d.is_finite() {
            return Err(Error::DegenerateInput("plane normal has zero length".into()));
        }
        let (mut a, mut b, mut c, mut d) = (a / n, b / n, c / n, d / n);
        let flip = if c != 0.0 {
            c < 0.0
        } else if b != 0.0 {
            b < 0.0
        } else {
            a < 0.0
        };
        if flip {
            a = -a;
            b = -b;
            c = -c;
            d = -d;
        }
        Ok(Self { a, b, c, d })
    }

    /// Exact plane through three points; `None` if they are (nearly) collinear.
    pub fn through(p: &Point3, q: &Point3, r: &Point3) -> Option<Self> {
        let n = (q - p).cross(&(r - p));
        let scale = (q - p).norm() * (r - p).norm();
        if !(n.norm() > 1e-9 * scale.max(1e-300)) {
            return None;
        }
        Self::new(n.x, n.y, n.z, -n.dot(&p.coords)).ok()
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }
}

/// `|a·x + b·y + c·z + d|` for a normalized plane.
pub fn point_plane_abs_distance(p: &Point3, m: &PlaneModel) -> f64 {
    (m.a * p.x + m.b * p.y + m.c * p.z + m.d).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub distance_threshold: f64,
    pub alpha: f64,
    pub inlier_prob: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 0.03,
            alpha: 0.99,
            inlier_prob: 0.5,
            rng_seed: 0,
        }
    }
}

/// Number of RANSAC trials needed to draw an all-inlier triple with
/// probability `alpha` when each point is an inlier with probability `inlier_prob`.
///
/// Rounds half away from zero and never returns less than one.
pub fn iteration_count(alpha: f64, inlier_prob: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(inlier_prob > 0.0 && inlier_prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inlier probability must lie in (0,1), got {inlier_prob}"
        )));
    }
    let outlier = 1.0 - inlier_prob;
    let all_inliers = (1.0 - outlier).powi(3);
    let n = ((1.0 - alpha).ln() / (1.0 - all_inliers).ln()).round();
    if !n.is_finite() {
        return Ok(1);
    }
    Ok((n as usize).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub plane: PlaneModel,
    pub ground: PointCloud3,
    pub obstacles: PointCloud3,
}

struct Candidate {
    plane: PlaneModel,
    inliers: usize,
    spread: f64,
}

/// Fits the dominant plane with seeded RANSAC and splits the cloud into
/// inliers (ground) and outliers (obstacles), preserving input order.
///
/// The winning sample is ranked by inlier count, then by the standard deviation
/// of inlier distances, then by iteration order. Its consensus set is refit by
/// least squares; the refit is kept unless it loses inliers.
pub fn fit_plane_ransac(cloud: &PointCloud3, cfg: &RansacConfig) -> Result<SegmentationResult> {
    if !(cfg.distance_threshold > 0.0) {
        return Err(Error::InvalidArgument("distance threshold must be positive".into()));
    }
    let n_points = cloud.points.len();
    if n_points < 3 {
        return Err(Error::DegenerateInput(format!("RANSAC needs 3 points, got {n_points}")));
    }
    let iterations = iteration_count(cfg.alpha, cfg.inlier_prob)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<Candidate> = None;
    let mut distances = Vec::with_capacity(n_points);

    for _ in 0..iterations {
        let i = rng.random_range(0..n_points);
        let mut j = rng.random_range(0..n_points - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n_points - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let Some(plane) = PlaneModel::through(&cloud.points[i], &cloud.points[j], &cloud.points[k]) else {
            continue;
        };
        distances.clear();
        distances.extend(
            cloud
                .points
                .iter()
                .map(|p| point_plane_abs_distance(p, &plane))
                .filter(|d| *d < cfg.distance_threshold),
        );
        let inliers = distances.len();
        let mean = distances.iter().sum::<f64>() / inliers.max(1) as f64;
        let spread = (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / inliers.max(1) as f64).sqrt();
        let better = match &best {
            None => true,
            Some(b) => inliers > b.inliers || (inliers == b.inliers && spread < b.spread),
        };
        if better {
            best = Some(Candidate { plane, inliers, spread });
        }
    }

    let best = best.ok_or_else(|| {
        Error::DegenerateInput(format!("all {iterations} RANSAC samples were collinear"))
    })?;
    let plane = match refine(cloud, &best.plane, cfg.distance_threshold) {
        Some((refined, count)) if count >= best.inliers => refined,
        _ => best.plane,
    };
    Ok(split(cloud, plane, cfg.distance_threshold))
}

/// Least-squares plane through the consensus set of `plane`: centroid plus the
/// eigenvector of the smallest scatter eigenvalue. Returns the refined plane
/// and its own inlier count.
fn refine(cloud: &PointCloud3, plane: &PlaneModel, threshold: f64) -> Option<(PlaneModel, usize)> {
    let inliers: Vec<&Point3> = cloud
        .points
        .iter()
        .filter(|p| point_plane_abs_distance(p, plane) < threshold)
        .collect();
    if inliers.len() < 3 {
        return None;
    }
    let n = inliers.len() as f64;
    let centroid = inliers.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let scatter = inliers.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal = eig.eigenvectors.column(imin).into_owned();
    let refined = PlaneModel::new(normal.x, normal.y, normal.z, -normal.dot(&centroid)).ok()?;
    let count = cloud
        .points
        .iter()
        .filter(|p| point_plane_abs_distance(p, &refined) < threshold)
        .count();
    Some((refined, count))
}

/// Partitions `cloud` by strict distance to `plane`.
pub fn split(cloud: &PointCloud3, plane: PlaneModel, threshold: f64) -> SegmentationResult {
    let (ground, obstacles): (Vec<Point3>, Vec<Point3>) = cloud
        .points
        .iter()
        .partition(|p| point_plane_abs_distance(p, &plane) < threshold);
    SegmentationResult {
        plane,
        ground: PointCloud3 {
            points: ground,
            frame: cloud.frame.clone(),
            stamp: cloud.stamp,
        },
        obstacles: PointCloud3 {
            points: obstacles,
            frame: cloud.frame.clone(),
            stamp: cloud.stamp,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand_distr::{Distribution, Normal};

    fn pc(points: Vec<Point3>) -> PointCloud3 {
        PointCloud3::new("base", 0.0, points).unwrap()
    }

    #[test]
    fn plane_distance_examples() {
        let z = PlaneModel::new(0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(point_plane_abs_distance(&Point3::new(1.0, 2.0, 3.0), &z), 3.0);
        assert_eq!(point_plane_abs_distance(&Point3::new(4.0, -2.0, 0.0), &z), 0.0);
        let diag = PlaneModel::new(1.0, 1.0, 1.0, 0.0).unwrap();
        // direct formula: (1+1+1)/√3
        let d = point_plane_abs_distance(&Point3::new(1.0, 1.0, 1.0), &diag);
        assert!((d - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn plane_normalization_points_up() {
        let p = PlaneModel::new(0.0, 0.0, -2.0, 4.0).unwrap();
        assert_eq!((p.a, p.b, p.c, p.d), (0.0, 0.0, 1.0, -2.0));
        assert!(PlaneModel::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn iteration_count_spot_values() {
        // log(0.01)/log(1-0.8^3) = 6.42 ; log(0.1)/log(1-0.5^3) = 17.24
        assert_eq!(iteration_count(0.99, 0.8).unwrap(), 6);
        assert_eq!(iteration_count(0.9, 0.5).unwrap(), 17);
        assert_eq!(iteration_count(0.99, 1.0 - 1e-12).unwrap(), 1);
        assert_eq!(iteration_count(0.99, 0.5).unwrap(), 34);
    }

    #[test]
    fn iteration_count_rejects_degenerate_probabilities() {
        for (a, u) in [(1.0, 0.5), (0.0, 0.5), (0.9, 0.0), (0.9, 1.0), (f64::NAN, 0.5)] {
            assert!(matches!(iteration_count(a, u), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn planted_floor_and_blocks_split_exactly() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        for i in 0..10 {
            pts.push(Point3::new(0.3 + 0.05 * i as f64, 0.5, 1.0));
        }
        let cfg = RansacConfig {
            distance_threshold: 0.05,
            rng_seed: 3,
            ..Default::default()
        };
        let res = fit_plane_ransac(&pc(pts.clone()), &cfg).unwrap();
        assert_eq!(res.ground.points, pts[..100].to_vec());
        assert_eq!(res.obstacles.points, pts[100..].to_vec());
        assert!((res.plane.c - 1.0).abs() < 1e-12 && res.plane.d.abs() < 1e-12);
    }

    #[test]
    fn coplanar_cloud_has_no_obstacles() {
        let pts: Vec<Point3> = (0..50)
            .map(|i| Point3::new((i % 7) as f64, (i / 7) as f64, 0.5 * (i % 7) as f64))
            .collect();
        let res = fit_plane_ransac(&pc(pts), &RansacConfig::default()).unwrap();
        assert!(res.obstacles.is_empty());
    }

    #[test]
    fn noisy_ground_with_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut pts = Vec::new();
        for _ in 0..200 {
            pts.push(Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                noise.sample(&mut rng),
            ));
        }
        for _ in 0..30 {
            pts.push(Point3::new(
                rng.random_range(0.5..0.8),
                rng.random_range(0.5..0.8),
                rng.random_range(0.2..0.5),
            ));
        }
        let res = fit_plane_ransac(&pc(pts.clone()), &RansacConfig { rng_seed: 5, ..Default::default() }).unwrap();
        let ground_hits = pts[..200].iter().filter(|p| res.ground.points.contains(p)).count();
        assert!(ground_hits >= 198, "ground recall {ground_hits}/200");
        assert!(pts[200..].iter().all(|p| res.obstacles.points.contains(p)));
    }

    #[test]
    fn too_few_or_collinear_points() {
        let two = pc(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(fit_plane_ransac(&two, &RansacConfig::default()), Err(Error::DegenerateInput(_))));
        let line = pc((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        assert!(matches!(fit_plane_ransac(&line, &RansacConfig::default()), Err(Error::DegenerateInput(_))));
    }

    proptest! {
        #[test]
        fn partition_is_deterministic_and_consistent(
            raw in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -0.5f64..1.0), 3..80),
            seed in any::<u64>(),
        ) {
            let cloud = pc(raw.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let cfg = RansacConfig { rng_seed: seed, ..Default::default() };
            let a = fit_plane_ransac(&cloud, &cfg);
            let b = fit_plane_ransac(&cloud, &cfg);
            prop_assert_eq!(&a, &b);
            if let Ok(res) = a {
                prop_assert_eq!(res.ground.len() + res.obstacles.len(), cloud.len());
                prop_assert!(res.plane.c >= 0.0);
                let recomputed: Vec<Point3> = cloud.points.iter()
                    .filter(|p| point_plane_abs_distance(p, &res.plane) < cfg.distance_threshold)
                    .copied().collect();
                prop_assert_eq!(recomputed, res.ground.points);
            }
        }
    }
}
