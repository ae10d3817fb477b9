//! Point containers, the three pre-processing filters and multi-sensor fusion.
//!
//! Filters are pure functions. Every filter drops non-finite points, so all
//! downstream consumers can assume finite coordinates.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::Isometry3;

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// An ordered bag of 3D points expressed in a named frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud3 {
    pub points: Vec<Point3>,
    pub frame: String,
    pub stamp: f64,
}

impl PointCloud3 {
    pub fn new(frame: impl Into<String>, stamp: f64, points: Vec<Point3>) -> Result<Self> {
        let frame = frame.into();
        if frame.is_empty() {
            return Err(Error::InvalidArgument("point cloud frame must be non-empty".into()));
        }
        Ok(Self { points, frame, stamp })
    }

    pub fn empty(frame: impl Into<String>, stamp: f64) -> Self {
        Self::new(frame, stamp, Vec::new()).expect("empty frame id")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn with_points(&self, points: Vec<Point3>) -> Self {
        Self {
            points,
            frame: self.frame.clone(),
            stamp: self.stamp,
        }
    }

    /// Applies `tf` to every point and relabels the cloud with `frame`.
    pub fn transformed(&self, tf: &Isometry3<f64>, frame: &str) -> Self {
        Self {
            points: self.points.iter().map(|p| tf * p).collect(),
            frame: frame.to_string(),
            stamp: self.stamp,
        }
    }

    /// Renders the cloud in the text fixture format:
    /// a `# frame=<id> stamp=<sec> n=<count>` header, then one `x y z` row per point.
    pub fn to_text(&self) -> String {
        let mut out = format!("# frame={} stamp={} n={}\n", self.frame, self.stamp, self.points.len());
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header = header.strip_prefix("# ").ok_or(Error::Parse {
            line: 1,
            msg: "header must start with `# `".into(),
        })?;
        let (mut frame, mut stamp, mut count) = (None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or(Error::Parse {
                line: 1,
                msg: format!("malformed header field `{field}`"),
            })?;
            let bad = |_| Error::Parse {
                line: 1,
                msg: format!("bad value for `{k}`"),
            };
            match k {
                "frame" => frame = Some(v.to_string()),
                "stamp" => stamp = Some(v.parse::<f64>().map_err(bad)?),
                "n" => count = Some(v.parse::<usize>().map_err(|_| Error::Parse {
                    line: 1,
                    msg: "bad value for `n`".into(),
                })?),
                _ => {}
            }
        }
        let (frame, stamp, count) = match (frame, stamp, count) {
            (Some(f), Some(s), Some(n)) => (f, s, n),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "header needs frame, stamp and n".into(),
                })
            }
        };
        let mut points = Vec::with_capacity(count);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: "expected three numbers".into(),
                })?;
            if vals.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected three numbers".into(),
                });
            }
            points.push(Point3::new(vals[0], vals[1], vals[2]));
        }
        if points.len() != count {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header says {count} points, found {}", points.len()),
            });
        }
        PointCloud3::new(frame, stamp, points)
    }
}

/// Pre-processing parameters for depth-camera clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub voxel_leaf: f64,
    pub max_range: f64,
    pub min_height: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            voxel_leaf: 0.02,
            max_range: 2.9,
            min_height: -0.05,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_leaf > 0.0) {
            return Err(Error::InvalidArgument("voxel_leaf must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidArgument("max_range must be positive".into()));
        }
        Ok(())
    }
}

/// Voxel-grid downsampling: one centroid per occupied voxel.
///
/// Voxels are half-open `[k·leaf, (k+1)·leaf)` per axis; output is sorted by
/// voxel index in (z, y, x) lexicographic order.
pub fn voxel_filter(cloud: &PointCloud3, leaf: f64) -> Result<PointCloud3> {
    if !(leaf > 0.0) || !leaf.is_finite() {
        return Err(Error::InvalidArgument(format!("voxel leaf must be positive, got {leaf}")));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), ([f64; 3], usize)> = BTreeMap::new();
    for p in cloud.points.iter().filter(|p| is_finite(p)) {
        let key = (
            (p.z / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.x / leaf).floor() as i64,
        );
        let acc = voxels.entry(key).or_insert(([0.0; 3], 0));
        acc.0[0] += p.x;
        acc.0[1] += p.y;
        acc.0[2] += p.z;
        acc.1 += 1;
    }
    let points = voxels
        .into_values()
        .map(|(sum, n)| {
            let n = n as f64;
            Point3::new(sum[0] / n, sum[1] / n, sum[2] / n)
        })
        .collect();
    Ok(cloud.with_points(points))
}

/// Keeps points whose distance to `origin` is at most `max_range` (closed bound).
pub fn range_filter(cloud: &PointCloud3, origin: &Point3, max_range: f64) -> Result<PointCloud3> {
    if !(max_range > 0.0) {
        return Err(Error::InvalidArgument(format!("max_range must be positive, got {max_range}")));
    }
    let points = cloud
        .points
        .iter()
        .filter(|p| is_finite(p) && nalgebra::distance(p, origin) <= max_range)
        .copied()
        .collect();
    Ok(cloud.with_points(points))
}

/// Drops non-finite points and points below `min_height`.
pub fn passthrough_filter(cloud: &PointCloud3, min_height: f64) -> PointCloud3 {
    let points = cloud
        .points
        .iter()
        .filter(|p| is_finite(p) && p.z >= min_height)
        .copied()
        .collect();
    cloud.with_points(points)
}

/// Maps source frame ids to `target_from_source` transforms.
pub type FrameTransforms = HashMap<String, Isometry3<f64>>;

/// Concatenates `clouds` after moving each into `target_frame`.
///
/// A cloud already in `target_frame` needs no entry in `transforms`.
pub fn fuse(clouds: &[PointCloud3], target_frame: &str, transforms: &FrameTransforms) -> Result<PointCloud3> {
    let mut out = PointCloud3::new(target_frame, f64::NEG_INFINITY, Vec::new())?;
    for cloud in clouds {
        let tf = if cloud.frame == target_frame {
            Isometry3::identity()
        } else {
            *transforms.get(&cloud.frame).ok_or_else(|| Error::MissingFrame {
                from: cloud.frame.clone(),
                to: target_frame.to_string(),
            })?
        };
        out.points.extend(cloud.points.iter().map(|p| tf * p));
        out.stamp = out.stamp.max(cloud.stamp);
    }
    if clouds.is_empty() {
        out.stamp = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud3 {
        PointCloud3::new("cam", 1.0, pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    /// Independent oracle: hash points by voxel index, average each bucket.
    fn voxel_oracle(pts: &[Point3], leaf: f64) -> Vec<Point3> {
        let mut buckets: HashMap<[i64; 3], Vec<Point3>> = HashMap::new();
        for p in pts {
            let k = [
                (p.x / leaf).floor() as i64,
                (p.y / leaf).floor() as i64,
                (p.z / leaf).floor() as i64,
            ];
            buckets.entry(k).or_default().push(*p);
        }
        buckets
            .values()
            .map(|v| {
                let n = v.len() as f64;
                Point3::from(v.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n)
            })
            .collect()
    }

    #[test]
    fn voxel_centroid_of_shared_voxel() {
        let c = cloud(&[[0.001, 0.001, 0.001], [0.015, 0.015, 0.015]]);
        let out = voxel_filter(&c, 0.02).unwrap();
        assert_eq!(out.len(), 1);
        let oracle = voxel_oracle(&c.points, 0.02);
        assert_eq!(oracle.len(), 1);
        for v in [out.points[0].x, out.points[0].y, out.points[0].z] {
            assert!((v - 0.008).abs() < 1e-15);
        }
        assert!((out.points[0] - oracle[0]).norm() < 1e-15);
    }

    #[test]
    fn voxel_distinct_voxels_both_retained() {
        let out = voxel_filter(&cloud(&[[0.01, 0.0, 0.0], [0.03, 0.0, 0.0]]), 0.02).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.points[0].x, 0.01);
        assert_eq!(out.points[1].x, 0.03);
    }

    #[test]
    fn voxel_dense_block_collapses_to_single_point() {
        // 0.005 m lattice strictly inside voxel (1,1,1) of a 0.02 m grid
        let mut pts = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    pts.push(Point3::new(
                        0.0201 + 0.005 * i as f64,
                        0.0201 + 0.005 * j as f64,
                        0.0201 + 0.005 * k as f64,
                    ));
                }
            }
        }
        let c = PointCloud3::new("cam", 0.0, pts).unwrap();
        let out = voxel_filter(&c, 0.02).unwrap();
        assert_eq!(out.len(), voxel_oracle(&c.points, 0.02).len());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn voxel_output_sorted_by_z_then_y_then_x() {
        let c = cloud(&[[0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.05], [0.0, 0.0, 0.0]]);
        let out = voxel_filter(&c, 0.02).unwrap();
        let expected = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.05]];
        for (p, e) in out.points.iter().zip(expected) {
            assert_eq!([p.x, p.y, p.z], e);
        }
    }

    #[test]
    fn voxel_rejects_non_positive_leaf() {
        assert!(matches!(voxel_filter(&cloud(&[]), 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(voxel_filter(&cloud(&[]), -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn range_filter_closed_bound() {
        let o = Point3::origin();
        let c = cloud(&[[2.5, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 2.9, 0.0]]);
        let out = range_filter(&c, &o, 2.9).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.points[0].x, 2.5);
        assert_eq!(out.points[1].y, 2.9);
        assert!(range_filter(&c, &o, 0.0).is_err());
    }

    #[test]
    fn passthrough_drops_low_and_non_finite() {
        let c = cloud(&[[0.0, 0.0, -0.2], [0.0, 0.0, 0.0], [f64::NAN, 0.0, 1.0], [0.0, f64::INFINITY, 1.0]]);
        let out = passthrough_filter(&c, -0.05);
        assert_eq!(out.points, vec![Point3::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn fuse_identity_and_translation() {
        let a = cloud(&[[1.0, 2.0, 3.0]]);
        let mut tfs = FrameTransforms::new();
        tfs.insert("cam".into(), Isometry3::identity());
        let out = fuse(&[a.clone()], "base", &tfs).unwrap();
        assert_eq!(out.points, a.points);

        tfs.insert(
            "cam".into(),
            Isometry3::from_parts(Translation3::new(1.0, 0.0, 0.0), UnitQuaternion::identity()),
        );
        let out = fuse(&[a.clone()], "base", &tfs).unwrap();
        for (p, q) in out.points.iter().zip(&a.points) {
            // per-point oracle
            assert_eq!([p.x, p.y, p.z], [q.x + 1.0, q.y, q.z]);
        }
        assert_eq!(out.frame, "base");
    }

    #[test]
    fn fuse_is_additive_and_takes_latest_stamp() {
        let mut a = cloud(&[[0.0; 3]; 5]);
        let mut b = cloud(&[[1.0; 3]; 5]);
        a.stamp = 2.0;
        b.stamp = 3.5;
        b.frame = "base".into();
        let mut tfs = FrameTransforms::new();
        tfs.insert("cam".into(), Isometry3::identity());
        let out = fuse(&[a, b], "base", &tfs).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out.stamp, 3.5);
    }

    #[test]
    fn fuse_missing_frame() {
        let err = fuse(&[cloud(&[[0.0; 3]])], "base", &FrameTransforms::new()).unwrap_err();
        assert!(matches!(err, Error::MissingFrame { .. }));
    }

    #[test]
    fn text_format_round_trip() {
        let c = cloud(&[[0.1, -2.0, 3.25], [1e-9, 0.0, -0.0]]);
        let text = c.to_text();
        assert!(text.starts_with("# frame=cam stamp=1 n=2\n"));
        assert_eq!(PointCloud3::from_text(&text).unwrap(), c);
        assert!(PointCloud3::from_text("# frame=a stamp=0 n=2\n1 2 3\n").is_err());
    }
}
