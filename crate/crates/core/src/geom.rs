//! Shared geometry: the yaw convention, angle wrapping and the pinhole camera.
//!
//! World and canonical frames are y-down: x lateral, y vertical (positive
//! down), z longitudinal. Zero yaw points the object nose along -z; positive
//! yaw turns the nose toward +x, i.e. the heading direction at yaw theta is
//! `(sin theta, 0, -cos theta)`.

use nalgebra::{Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// Smallest absolute difference between two angles, wrapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Rotation about the (downward) y axis by `theta`.
///
/// Maps the canonical nose direction (0,0,-1) to (sin theta, 0, -cos theta).
pub fn yaw_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Heading direction in the world xz-plane for a given yaw.
pub fn heading_direction(theta: f64) -> Vector3<f64> {
    Vector3::new(theta.sin(), 0.0, -theta.cos())
}

/// Yaw whose heading points along the (horizontal projection of) `dir`.
pub fn heading_from_direction(dir: &Vector3<f64>) -> f64 {
    dir.x.atan2(-dir.z)
}

/// Object-to-world isometry for a yaw-constrained pose.
///
/// The rotation is about the downward y axis, i.e. `-theta` about +y.
pub fn object_to_world(translation: &Vector3<f64>, theta: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(*translation),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -theta),
    )
}

/// Pinhole camera intrinsics. Pixel (u, v) with depth z back-projects to
/// ((u - cx) z / f, (v - cy) z / f, z) in the camera frame (y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(f: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            f,
            cx,
            cy,
            width,
            height,
        }
    }

    /// KITTI-like stereo rig intrinsics.
    pub fn default_stereo() -> Self {
        Self::new(721.0, 621.0, 187.5, 1242, 375)
    }

    /// Unnormalized ray direction through the center of pixel (u, v);
    /// integer-valued indices address pixel centers via the +0.5 convention.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(
            (u + 0.5 - self.cx) / self.f,
            (v + 0.5 - self.cy) / self.f,
            1.0,
        )
    }

    /// Back-projects pixel (u, v) at camera depth `z` to a camera-frame point.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::from(self.ray_direction(u, v) * z)
    }

    /// Projects a camera-frame point; returns (u, v) as floats, or None when
    /// the point is behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.f * p.x / p.z + self.cx - 0.5,
            self.f * p.y / p.z + self.cy - 0.5,
        ))
    }
}
