use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rigid transform `x ↦ R·x + t`.
///
/// When used as a camera pose it maps world coordinates to camera coordinates
/// (`X_cam = R·X_world + t`); use [`Pose::inverse`] for world-from-camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

fn orthonormal_tolerance<T: Real>() -> T {
    let eps = T::default_epsilon() * T::lit(100.0);
    if eps > T::lit(1e-9) {
        eps
    } else {
        T::lit(1e-9)
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let dev = gram.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if !(dev < orthonormal_tolerance::<T>()) || !(self.rotation.determinant() > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal with positive determinant (deviation {dev:?})"
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(())
    }

    /// Pose from a Hamilton quaternion `(qx, qy, qz, qw)` and translation. The quaternion is normalized.
    pub fn from_quaternion(q: [T; 4], translation: Vector3<T>) -> Result<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        if !(quat.norm() > T::lit(1e-12)) {
            return Err(Error::InvalidArgument("zero-norm quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Pose {
            rotation: unit.to_rotation_matrix().into_inner(),
            translation,
        })
    }

    /// Hamilton quaternion `(qx, qy, qz, qw)` with `qw ≥ 0`.
    pub fn quaternion(&self) -> [T; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        if q.w < T::zero() {
            [-q.i, -q.j, -q.k, -q.w]
        } else {
            [q.i, q.j, q.k, q.w]
        }
    }

    pub fn from_axis_angle(axis: Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        let rotation = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Pose {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose<T>) -> Self {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates, for a camera-from-world pose.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Angle (radians) of the relative rotation between two poses.
    pub fn rotation_angle_to(&self, other: &Pose<T>) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
        c.acos()
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|x| U::lit(x.f64())),
            translation: self.translation.map(|x| U::lit(x.f64())),
        }
    }
}

/// Camera-frame rotation for pitch (about +x) followed by yaw (about +y), both in radians.
pub fn pitch_yaw_rotation<T: Real>(pitch: T, yaw: T) -> Matrix3<T> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    (ry * rx).into_inner()
}
