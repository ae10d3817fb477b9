use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use crate::geometry::Pose2;
use crate::pointcloud::Point3;

/// Rigid motion `p ↦ R·p + t`; the rotation is a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform3 {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for RigidTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform3 {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    /// Translation followed by a rotation vector (axis · angle).
    pub fn from_params(p: &[f64]) -> Self {
        Self {
            translation: Vector3::new(p[0], p[1], p[2]),
            rotation: UnitQuaternion::from_scaled_axis(Vector3::new(p[3], p[4], p[5])),
        }
    }

    pub fn to_params(&self) -> [f64; 6] {
        let r = self.rotation.scaled_axis();
        [self.translation.x, self.translation.y, self.translation.z, r.x, r.y, r.z]
    }

    pub fn from_planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, 0.0),
            rotation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform3) -> RigidTransform3 {
        Self {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> RigidTransform3 {
        let inv = self.rotation.inverse();
        Self {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn yaw(&self) -> f64 {
        let m = self.rotation.to_rotation_matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    pub fn planar(&self) -> Pose2 {
        Pose2::new(self.translation.x, self.translation.y, self.yaw())
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}
