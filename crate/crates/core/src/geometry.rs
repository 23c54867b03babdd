//! Camera model, unprojection, and rotation representations.
//!
//! Conventions used across the crate:
//! - Camera frame: +z forward, +x right, +y down (meters).
//! - Pixel coordinates: `u` is the column, `v` is the row; pixel centers sit
//!   on integer coordinates.
//! - Depth lookups use nearest-neighbor sampling. Bilinear interpolation would
//!   blend depth across object boundaries, which is exactly where contact
//!   points live.
//! - Quaternions are scalar-first and canonicalized to `w >= 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth values at or beyond this bound are treated as invalid sensor output.
pub const MAX_DEPTH_M: f32 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({u:.2}, {v:.2}) outside {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("invalid depth {depth} at pixel ({u}, {v})")]
    InvalidDepth { u: usize, v: usize, depth: f32 },
    #[error("quaternion norm {norm} deviates from 1 by more than 1e-4")]
    NonUnit { norm: f64 },
    #[error("degenerate 6D rotation: {0}")]
    Degenerate(&'static str),
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
}

/// Pinhole intrinsics `(f_x, f_y, c_x, c_y)` plus the image size they refer to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(cx >= 0.0 && cx < width as f64, "principal point cx out of image");
        assert!(cy >= 0.0 && cy < height as f64, "principal point cy out of image");
        Self { fx, fy, cx, cy, width, height }
    }
}

/// Continuous pixel position (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Nearest integer pixel, or `None` if it falls outside the given size.
    pub fn nearest_pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let ui = self.u.round();
        let vi = self.v.round();
        if ui < 0.0 || vi < 0.0 || ui >= width as f64 || vi >= height as f64 {
            return None;
        }
        Some((ui as usize, vi as usize))
    }

    pub fn dist(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// 3D point (or free vector) in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ZERO: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub fn add(&self, o: &Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(&self, o: &Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(&self, o: &Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Option<Point3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Unit quaternion, scalar-first, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes and canonicalizes. Errors if the norm is off by more than 1e-4.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-4 {
            return Err(GeometryError::NonUnit { norm });
        }
        Ok(Self { w: w / norm, x: x / norm, y: y / norm, z: z / norm }.canonicalized())
    }

    /// Builds from arbitrary non-zero components, normalizing whatever scale.
    pub fn from_unnormalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::NonUnit { norm });
        }
        Ok(Self { w: w / norm, x: x / norm, y: y / norm, z: z / norm }.canonicalized())
    }

    /// Rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Point3, angle: f64) -> Self {
        let a = axis.normalized().expect("axis must be non-zero");
        let half = 0.5 * angle;
        let s = half.sin();
        Self { w: half.cos(), x: a.x * s, y: a.y * s, z: a.z * s }.canonicalized()
    }

    /// `q` and `-q` encode the same rotation; pick the `w >= 0` representative.
    /// At `w == 0` the first non-zero vector component is made positive so the
    /// choice stays deterministic.
    pub fn canonicalized(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Geodesic angle between the two rotations, in `[0, pi]`.
    ///
    /// Mathematically `2 acos(|<q1, q2>|)`, computed through the chordal
    /// distance so small angles keep full precision (acos of a dot near 1
    /// cannot resolve below ~1e-8).
    pub fn geodesic(&self, o: &Quaternion) -> f64 {
        let diff = ((self.w - o.w).powi(2)
            + (self.x - o.x).powi(2)
            + (self.y - o.y).powi(2)
            + (self.z - o.z).powi(2))
        .sqrt();
        let sum = ((self.w + o.w).powi(2)
            + (self.x + o.x).powi(2)
            + (self.y + o.y).powi(2)
            + (self.z + o.z).powi(2))
        .sqrt();
        let chord = diff.min(sum);
        4.0 * (chord / 2.0).clamp(0.0, 1.0).asin()
    }

    /// Hamilton product `self * o` (applies `o` first).
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
        .canonicalized()
    }

    /// Rotates a point/vector.
    pub fn rotate(&self, p: &Point3) -> Point3 {
        let m = self.to_matrix();
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shepperd's method; assumes a proper rotation matrix (row-major).
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Quaternion {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion {
                w: 0.25 * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quaternion {
                w: (m[2][1] - m[1][2]) / s,
                x: 0.25 * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quaternion {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: 0.25 * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quaternion {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: 0.25 * s,
            }
        };
        let norm = q.dot(&q).sqrt();
        Quaternion { w: q.w / norm, x: q.x / norm, y: q.y / norm, z: q.z / norm }.canonicalized()
    }
}

/// Continuous 6D rotation representation: the first two columns of a rotation
/// matrix, before re-orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D {
    pub a1: [f64; 3],
    pub a2: [f64; 3],
}

impl Rot6D {
    pub fn from_vec6(v: &[f64; 6]) -> Self {
        Self { a1: [v[0], v[1], v[2]], a2: [v[3], v[4], v[5]] }
    }

    pub fn to_vec6(&self) -> [f64; 6] {
        [self.a1[0], self.a1[1], self.a1[2], self.a2[0], self.a2[1], self.a2[2]]
    }
}

/// Full 6-DoF pose: 3D contact position plus contact orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6DoF {
    pub position: Point3,
    pub orientation: Quaternion,
}

/// Row-major depth grid in meters; values `<= 0` mark invalid pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "depth grid size mismatch");
        debug_assert!(
            values.iter().all(|&d| d <= 0.0 || (d.is_finite() && d < MAX_DEPTH_M)),
            "valid depths must lie in (0, {MAX_DEPTH_M})"
        );
        Self { width, height, values }
    }

    pub fn constant(width: usize, height: usize, depth: f32) -> Self {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f32> {
        if u < self.width && v < self.height {
            Some(self.values[v * self.width + u])
        } else {
            None
        }
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f32) {
        assert!(u < self.width && v < self.height);
        self.values[v * self.width + u] = depth;
    }

    pub fn is_valid_at(&self, u: usize, v: usize) -> bool {
        matches!(self.get(u, v), Some(d) if d > 0.0 && d < MAX_DEPTH_M)
    }

    /// Nearest-neighbor depth at a continuous pixel position.
    pub fn sample(&self, c: &PixelPoint) -> Result<f32, GeometryError> {
        let (u, v) = c
            .nearest_pixel(self.width, self.height)
            .ok_or(GeometryError::OutOfBounds { u: c.u, v: c.v, width: self.width, height: self.height })?;
        let d = self.values[v * self.width + u];
        if d > 0.0 && d < MAX_DEPTH_M {
            Ok(d)
        } else {
            Err(GeometryError::InvalidDepth { u, v, depth: d })
        }
    }
}

/// The contact-point-plus-contact-pose affordance prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCenteredAffordance {
    pub contact_point: PixelPoint,
    pub orientation: Quaternion,
}

/// Lifts a pixel with observed depth into the camera frame:
/// `z = D(u, v)`, `x = (u - c_x) z / f_x`, `y = (v - c_y) z / f_y`.
pub fn unproject(
    k: &CameraIntrinsics,
    c: &PixelPoint,
    depth: &DepthMap,
) -> Result<Point3, GeometryError> {
    if c.nearest_pixel(k.width, k.height).is_none() {
        return Err(GeometryError::OutOfBounds { u: c.u, v: c.v, width: k.width, height: k.height });
    }
    let z = depth.sample(c)? as f64;
    Ok(Point3::new((c.u - k.cx) * z / k.fx, (c.v - k.cy) * z / k.fy, z))
}

/// Forward pinhole projection, the inverse of [`unproject`].
pub fn project(k: &CameraIntrinsics, p: &Point3) -> Result<PixelPoint, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    Ok(PixelPoint::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// First two rotation-matrix columns of a unit quaternion.
pub fn quat_to_rot6d(q: &Quaternion) -> Result<Rot6D, GeometryError> {
    let norm = q.dot(q).sqrt();
    if (norm - 1.0).abs() > 1e-4 {
        return Err(GeometryError::NonUnit { norm });
    }
    let m = q.to_matrix();
    Ok(Rot6D {
        a1: [m[0][0], m[1][0], m[2][0]],
        a2: [m[0][1], m[1][1], m[2][1]],
    })
}

/// Gram-Schmidt reconstruction of the full rotation from its 6D form.
pub fn rot6d_to_quat(r: &Rot6D) -> Result<Quaternion, GeometryError> {
    let a1 = Point3::new(r.a1[0], r.a1[1], r.a1[2]);
    let a2 = Point3::new(r.a2[0], r.a2[1], r.a2[2]);
    let n1 = a1.norm();
    if n1 < 1e-6 {
        return Err(GeometryError::Degenerate("first column is near zero"));
    }
    let b1 = a1.scale(1.0 / n1);
    let a2_orth = a2.sub(&b1.scale(a2.dot(&b1)));
    let n2 = a2_orth.norm();
    if n2 < 1e-6 {
        return Err(GeometryError::Degenerate("columns are near parallel"));
    }
    let b2 = a2_orth.scale(1.0 / n2);
    let b3 = b1.cross(&b2);
    Ok(Quaternion::from_matrix(&[
        [b1.x, b2.x, b3.x],
        [b1.y, b2.y, b3.y],
        [b1.z, b2.z, b3.z],
    ]))
}

/// Composes unprojection of the contact point with the predicted orientation
/// into the pose handed to a robot controller.
pub fn assemble_pose(
    k: &CameraIntrinsics,
    a: &PoseCenteredAffordance,
    depth: &DepthMap,
) -> Result<Pose6DoF, GeometryError> {
    Ok(Pose6DoF {
        position: unproject(k, &a.contact_point, depth)?,
        orientation: a.orientation,
    })
}
