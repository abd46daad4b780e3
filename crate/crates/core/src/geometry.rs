//! Pinhole camera geometry, rigid transforms and detection-box normalization.
//!
//! Conventions used throughout the crate:
//! - depth is in meters, 0 marks a missing measurement;
//! - pixel coordinates are continuous with pixel centers at integer
//!   coordinates, so pixel `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`;
//! - bounding boxes are expressed in edge coordinates over `[0, width] x [0, height]`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid("intrinsics", "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::invalid(
                "intrinsics",
                format!(
                    "principal point ({}, {}) outside {}x{} image",
                    self.cx, self.cy, self.width, self.height
                ),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && u < self.width as f64 - 0.5 && v >= -0.5 && v < self.height as f64 - 0.5
    }

    /// Integer pixel whose footprint contains `(u, v)`.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        if !self.contains(u, v) {
            return None;
        }
        let i = (u + 0.5).floor() as u32;
        let j = (v + 0.5).floor() as u32;
        Some((i.min(self.width - 1), j.min(self.height - 1)))
    }
}

pub fn backproject_pixel(k: &CameraIntrinsics, u: f64, v: f64, depth: f64) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth { depth });
    }
    if !k.contains(u, v) {
        return Err(Error::OutOfBounds {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(Point3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Returns `(u, v, depth)`.
pub fn project_point(k: &CameraIntrinsics, p: &Point3) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Row-major depth in meters, 0 = invalid.
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::mismatch(
                "depth map",
                width as usize * height as usize,
                values.len(),
            ));
        }
        if let Some(bad) = values.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidDepth { depth: *bad });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn check_matches(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(Error::mismatch(
                "depth map vs intrinsics",
                format!("{}x{}", k.width, k.height),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self { points }
    }
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates `R^T R = I` and `det R = +1` to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("rigid transform", "non-finite entry"));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation not orthonormal (max |R^T R - I| = {ortho:e})"),
            ));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation determinant {det} != 1"),
            ));
        }
        Ok(())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner();
        Self {
            rotation,
            translation,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply(&self, pc: &PointCloud) -> PointCloud {
        PointCloud {
            points: pc.points.iter().map(|p| self.transform_point(p)).collect(),
        }
    }

    /// Geodesic angle in radians between the two rotations.
    pub fn rotation_error(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Rotation angle of `r`, accurate near 0 and near pi.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_vec = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * sin_vec.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BoundingBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self> {
        if !(u_min < u_max && v_min < v_max) {
            return Err(Error::invalid(
                "bounding box",
                format!("empty extent ({u_min}, {v_min}, {u_max}, {v_max})"),
            ));
        }
        Ok(Self {
            u_min,
            v_min,
            u_max,
            v_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.u_min <= other.u_min
            && self.v_min <= other.v_min
            && self.u_max >= other.u_max
            && self.v_max >= other.v_max
    }
}

/// Smallest square centered on `bbox` that contains it, shifted (never
/// shrunk) to lie inside the image. Returns the square and the factor that
/// resizes it to `target_side`.
pub fn square_and_resize_box(
    bbox: &BoundingBox,
    image_size: (u32, u32),
    target_side: f64,
) -> Result<(BoundingBox, f64)> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    if !(bbox.u_min < bbox.u_max && bbox.v_min < bbox.v_max) {
        return Err(Error::invalid("bounding box", "empty extent"));
    }
    if bbox.u_max <= 0.0 || bbox.v_max <= 0.0 || bbox.u_min >= w || bbox.v_min >= h {
        return Err(Error::invalid(
            "bounding box",
            "does not intersect the image",
        ));
    }
    if !(target_side > 0.0) {
        return Err(Error::invalid("target side", "must be positive"));
    }
    let side = bbox.width().max(bbox.height());
    let limit = w.min(h);
    if side > limit {
        return Err(Error::BoxTooLarge { side, limit });
    }
    let (cu, cv) = bbox.center();
    let place = |center: f64, extent: f64| {
        let lo = center - 0.5 * side;
        if lo < 0.0 {
            0.0
        } else if lo + side > extent {
            extent - side
        } else {
            lo
        }
    };
    let u0 = place(cu, w);
    let v0 = place(cv, h);
    let square = BoundingBox {
        u_min: u0,
        v_min: v0,
        u_max: u0 + side,
        v_max: v0 + side,
    };
    Ok((square, target_side / side))
}
