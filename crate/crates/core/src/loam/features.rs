use std::collections::HashMap;

use super::LoamConfig;
use crate::pointcloud::Point3;

/// One LiDAR sweep, ring by ring; points within a ring are ordered by azimuth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub rings: Vec<Vec<Point3>>,
    pub stamp: f64,
    pub index: u64,
}

impl Scan {
    pub fn new(rings: Vec<Vec<Point3>>, stamp: f64, index: u64) -> Self {
        Self { rings, stamp, index }
    }

    pub fn len(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `‖Σ_{j≠i} (X_i − X_j)‖ / (|S|·‖X_i‖)` over `s` neighbours on each side.
/// `None` near the ring ends or at the sensor origin.
pub fn smoothness(ring: &[Point3], i: usize, s: usize) -> Option<f64> {
    if s == 0 || i < s || i + s >= ring.len() {
        return None;
    }
    let xi = ring[i].coords;
    let range = xi.norm();
    if range == 0.0 {
        return None;
    }
    let mut sum = nalgebra::Vector3::zeros();
    for j in i - s..=i + s {
        if j != i {
            sum += xi - ring[j].coords;
        }
    }
    Some(sum.norm() / ((2 * s) as f64 * range))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub point: Point3,
    pub c: f64,
    pub ring: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub edges: Vec<Feature>,
    pub planars: Vec<Feature>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Smoothness for every point whose neighbourhood is usable: far enough from
/// the sensor and free of occlusion gaps or missing returns.
pub(crate) fn ring_smoothness(ring: &[Point3], cfg: &LoamConfig) -> Vec<Option<f64>> {
    let s = cfg.neighbors;
    let n = ring.len();
    // gap[k]: distance between points k and k+1.
    let gap: Vec<f64> = ring.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    (0..n)
        .map(|i| {
            if i < s || i + s >= n {
                return None;
            }
            let range = ring[i].coords.norm();
            if range < cfg.min_range {
                return None;
            }
            let limit = cfg.gap_ratio * range;
            if gap[i - s..i + s].iter().any(|g| *g > limit) {
                return None;
            }
            smoothness(ring, i, s)
        })
        .collect()
}

fn subregion(p: &Point3, count: usize) -> usize {
    let az = p.y.atan2(p.x) + std::f64::consts::PI;
    ((az / (2.0 * std::f64::consts::PI) * count as f64) as usize).min(count - 1)
}

/// Per ring and azimuth subregion: the sharpest points above the edge
/// threshold become edges, the flattest below the planar threshold become
/// planars. A chosen point blocks its `neighbors` on both sides from being
/// chosen again so features spread out.
pub fn extract_features(scan: &Scan, cfg: &LoamConfig) -> FeatureSet {
    let mut out = FeatureSet::default();
    for (r, ring) in scan.rings.iter().enumerate() {
        let c = ring_smoothness(ring, cfg);
        let mut regions: Vec<Vec<usize>> = vec![Vec::new(); cfg.subregions];
        for (i, ci) in c.iter().enumerate() {
            if ci.is_some() {
                regions[subregion(&ring[i], cfg.subregions)].push(i);
            }
        }
        let mut taken = vec![false; ring.len()];
        let block = |taken: &mut Vec<bool>, i: usize| {
            let lo = i.saturating_sub(cfg.neighbors);
            let hi = (i + cfg.neighbors).min(ring.len() - 1);
            for t in taken.iter_mut().take(hi + 1).skip(lo) {
                *t = true;
            }
        };
        for idx in regions.iter_mut() {
            // Descending smoothness, index as tie-break.
            idx.sort_by(|a, b| c[*b].unwrap().total_cmp(&c[*a].unwrap()).then(a.cmp(b)));
            let mut chosen = 0;
            let mut edge_idx = Vec::new();
            for &i in idx.iter() {
                if chosen == cfg.edges_per_subregion {
                    break;
                }
                let ci = c[i].unwrap();
                if ci < cfg.edge_threshold {
                    break;
                }
                if taken[i] {
                    continue;
                }
                out.edges.push(Feature {
                    point: ring[i],
                    c: ci,
                    ring: r,
                });
                edge_idx.push(i);
                chosen += 1;
                block(&mut taken, i);
            }
            let mut chosen = 0;
            for &i in idx.iter().rev() {
                if chosen == cfg.planars_per_subregion {
                    break;
                }
                let ci = c[i].unwrap();
                if ci > cfg.planar_threshold {
                    break;
                }
                if taken[i] {
                    continue;
                }
                out.planars.push(Feature {
                    point: ring[i],
                    c: ci,
                    ring: r,
                });
                chosen += 1;
                block(&mut taken, i);
            }
        }
    }
    out
}

/// Previous-scan points available for matching, bucketed on a uniform grid.
#[derive(Debug, Clone, Default)]
pub struct ReferenceCloud {
    /// Points sharp enough to define edge lines.
    pub sharp: Vec<Feature>,
    /// Points flat enough to define patches.
    pub flat: Vec<Feature>,
    cell: f64,
    sharp_grid: HashMap<(i64, i64, i64), Vec<usize>>,
    flat_grid: HashMap<(i64, i64, i64), Vec<usize>>,
}

fn key(p: &Point3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

fn bucket(points: &[Feature], cell: f64) -> HashMap<(i64, i64, i64), Vec<usize>> {
    let mut grid: HashMap<_, Vec<usize>> = HashMap::new();
    for (i, f) in points.iter().enumerate() {
        grid.entry(key(&f.point, cell)).or_default().push(i);
    }
    grid
}

impl ReferenceCloud {
    pub fn new(sharp: Vec<Feature>, flat: Vec<Feature>, cell: f64) -> Self {
        let sharp_grid = bucket(&sharp, cell);
        let flat_grid = bucket(&flat, cell);
        Self {
            sharp,
            flat,
            cell,
            sharp_grid,
            flat_grid,
        }
    }

    pub fn from_scan(scan: &Scan, cfg: &LoamConfig) -> Self {
        let mut sharp = Vec::new();
        let mut flat = Vec::new();
        for (r, ring) in scan.rings.iter().enumerate() {
            for (i, c) in ring_smoothness(ring, cfg).into_iter().enumerate() {
                let Some(c) = c else { continue };
                let f = Feature {
                    point: ring[i],
                    c,
                    ring: r,
                };
                if c >= cfg.edge_threshold {
                    sharp.push(f);
                } else if c <= cfg.planar_threshold {
                    flat.push(f);
                }
            }
        }
        Self::new(sharp, flat, cfg.support_radius)
    }

    pub fn is_empty(&self) -> bool {
        self.sharp.is_empty() && self.flat.is_empty()
    }

    /// Nearest point within `radius` satisfying `accept`; ties go to the
    /// lower index so results do not depend on hash order.
    pub(crate) fn nearest(
        &self,
        sharp: bool,
        q: &Point3,
        radius: f64,
        accept: impl Fn(usize, &Feature) -> bool,
    ) -> Option<(usize, f64)> {
        let (points, grid) = if sharp {
            (&self.sharp, &self.sharp_grid)
        } else {
            (&self.flat, &self.flat_grid)
        };
        let reach = (radius / self.cell).ceil() as i64;
        let (kx, ky, kz) = key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(bucket) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &i in bucket {
                        let d = (points[i].point - q).norm();
                        if d > radius || !accept(i, &points[i]) {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Point3> {
        (0..n).map(|i| Point3::new(3.0, i as f64 * 0.02 - 1.0, 0.0)).collect()
    }

    #[test]
    fn collinear_points_have_zero_smoothness() {
        let ring = line(21);
        assert!(smoothness(&ring, 10, 5).unwrap() < 1e-15);
        assert_eq!(smoothness(&ring, 2, 5), None);
    }

    #[test]
    fn corner_is_sharper_than_flat_neighbors() {
        // Wall along y at x=3, turning into a wall along x at y=1.
        let mut ring: Vec<Point3> = (0..20).map(|i| Point3::new(3.0, 0.6 + i as f64 * 0.02, 0.0)).collect();
        ring.extend((1..20).map(|i| Point3::new(3.0 - i as f64 * 0.02, 0.98, 0.0)));
        let corner = 19;
        let cc = smoothness(&ring, corner, 5).unwrap();
        for i in 5..ring.len() - 5 {
            if (i as i64 - corner as i64).abs() > 5 {
                assert!(cc > smoothness(&ring, i, 5).unwrap());
            }
        }
    }

    #[test]
    fn smoothness_is_scale_invariant() {
        let ring: Vec<Point3> = (0..15).map(|i| Point3::new(1.0 + 0.1 * (i as f64).sin(), i as f64 * 0.1, 0.2)).collect();
        let scaled: Vec<Point3> = ring.iter().map(|p| Point3::from(p.coords * 2.0)).collect();
        let a = smoothness(&ring, 7, 5).unwrap();
        let b = smoothness(&scaled, 7, 5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_ring_gives_no_features() {
        let scan = Scan::new(vec![Vec::new()], 0.0, 0);
        assert!(extract_features(&scan, &LoamConfig::default()).is_empty());
    }

    #[test]
    fn flat_wall_gives_planars_only() {
        let scan = Scan::new(vec![line(101)], 0.0, 0);
        let f = extract_features(&scan, &LoamConfig::default());
        assert!(f.edges.is_empty());
        assert!(!f.planars.is_empty() && f.planars.iter().all(|p| p.c < 1e-12));
    }
}
