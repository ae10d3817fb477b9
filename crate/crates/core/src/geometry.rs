//! Planar pose and angle helpers shared by the planners and the simulator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar robot pose. `beta` is the heading, kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub beta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, beta: f64) -> Self {
        Self {
            x,
            y,
            beta: normalize_angle(beta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// `self ∘ other`: expresses a pose given in `self`'s frame in the parent frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.beta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.beta + other.beta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.beta.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.beta)
    }

    /// `self⁻¹ ∘ other`: `other` expressed in this pose's frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Transforms a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.beta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }
}

/// Euclidean distance from `p` to segment `a`–`b`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((normalize_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn compose_translates_in_rotated_frame() {
        let a = Pose2::new(1.0, 0.0, PI / 2.0);
        let b = a.compose(&Pose2::new(1.0, 0.0, 0.0));
        assert!((b.x - 1.0).abs() < 1e-12);
        assert!((b.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn between_undoes_compose() {
        let a = Pose2::new(0.3, -1.2, 2.5);
        let d = Pose2::new(0.1, 0.05, -0.4);
        let r = a.between(&a.compose(&d));
        assert!((r.x - d.x).abs() < 1e-12 && (r.y - d.y).abs() < 1e-12 && (r.beta - d.beta).abs() < 1e-12);
        let id = a.compose(&a.inverse());
        assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12 && id.beta.abs() < 1e-12);
    }

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        assert!((point_segment_distance([2.0, 1.0], [0.0, 0.0], [1.0, 0.0]) - 2f64.sqrt()).abs() < 1e-12);
        assert!((point_segment_distance([0.5, 1.0], [0.0, 0.0], [1.0, 0.0]) - 1.0).abs() < 1e-12);
    }
}
