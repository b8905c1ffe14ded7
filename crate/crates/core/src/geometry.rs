//! Camera geometry: pinhole projection, rigid poses and the point types the
//! rest of the pipeline is expressed in.
//!
//! Poses are world-from-camera: `transform(pose, p)` takes a point in the
//! camera frame to the world frame. Camera frame follows the usual optical
//! convention (x right, y down, z forward).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3D point in meters. Whether it lives in the camera or world frame is
/// stated by each function that takes or returns one.
pub type Point3D = nalgebra::Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("rotation is not orthonormal with det +1 (error {0:e})")]
    NotARotation(f64),
}

/// Sub-pixel image coordinate. `u` runs along columns, `v` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "cx = {} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "cy = {} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Whether a pixel lies inside the image rectangle `[0, w-1] x [0, h-1]`.
    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.width - 1) as f64
            && px.v <= (self.height - 1) as f64
    }
}

/// Rigid transform, world-from-camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checked constructor; the rotation must be orthonormal with det +1
    /// within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = (rotation.determinant() - 1.0).abs();
        let err = ortho.max(det);
        if !(err <= ORTHONORMAL_TOL) || !translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_parts(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::from_parts(&q.to_rotation_matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3D {
        Point3D::from(self.translation)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3D) -> Point3D {
        Point3D::from(self.rotation * p.coords + self.translation)
    }

    /// World point into this pose's camera frame.
    pub fn inverse_transform_point(&self, p: &Point3D) -> Point3D {
        Point3D::from(self.rotation.transpose() * (p.coords - self.translation))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Camera-frame point to pixel. Errors when `z <= 0` (or not finite).
pub fn project(p: &Point3D, cam: &CameraModel) -> Result<PixelPoint, GeometryError> {
    if !(p.z > 0.0) || !p.z.is_finite() {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(PixelPoint {
        u: cam.fx * p.x / p.z + cam.cx,
        v: cam.fy * p.y / p.z + cam.cy,
    })
}

/// Pixel plus metric depth to a camera-frame point.
pub fn unproject(px: &PixelPoint, depth: f64, cam: &CameraModel) -> Result<Point3D, GeometryError> {
    if !is_valid_depth(depth) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(Point3D::new(
        (px.u - cam.cx) * depth / cam.fx,
        (px.v - cam.cy) * depth / cam.fy,
        depth,
    ))
}

/// Camera-frame point to world frame.
pub fn transform(pose: &Pose, p: &Point3D) -> Point3D {
    pose.transform_point(p)
}

/// Depth 0 is the "no measurement" sentinel; negative and non-finite values
/// are rejected as well.
#[inline]
pub fn is_valid_depth(depth: f64) -> bool {
    depth > 0.0 && depth.is_finite()
}
