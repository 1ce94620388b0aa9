//! Rigid transforms and planar primitives shared by the scene store, the
//! planning metrics and the temporal-memory reference.
//!
//! Frame convention: +x forward, +y left, +z up; yaw is counterclockwise
//! about +z.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR - I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation is a reflection (det = {det})")]
    Reflection { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("polygon has {0} vertices, at least 3 required")]
    TooFewVertices(usize),
    #[error("polygon vertices are collinear")]
    Collinear,
}

/// Rotation followed by translation: `x ↦ R·x + t`.
///
/// Serialized as `{rotation: [9, row-major], translation: [3]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawTransform", try_from = "RawTransform")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        RawTransform {
            rotation: t.rotation_row_major(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = GeometryError;

    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        RigidTransform::from_row_major(&raw.rotation, raw.translation)
    }
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

    /// Validates the rotation block before building the transform.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    /// Row-major 3x3 rotation as stored in scene documents.
    pub fn from_row_major(rot: &[f64; 9], translation: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(
            Matrix3::from_row_slice(rot),
            Vector3::new(translation[0], translation[1], translation[2]),
        )
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        let deviation = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if deviation > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::Reflection { det });
        }
        Ok(())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
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

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Heading of the rotated +x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// 12 numbers: row-major rotation then translation.
    pub fn flatten(&self) -> [f64; 12] {
        let r = self.rotation_row_major();
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&r);
        out[9] = self.translation.x;
        out[10] = self.translation.y;
        out[11] = self.translation.z;
        out
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar pose used to move ground-plane geometry (lanes, polygons) between
/// frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    /// World point into this pose's local frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }
}

/// 2D box with its yaw measured counterclockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox2D {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
}

impl OrientedBox2D {
    pub fn new(center: [f64; 2], half_extents: [f64; 2], yaw: f64) -> Self {
        debug_assert!(half_extents[0] > 0.0 && half_extents[1] > 0.0);
        Self {
            center,
            half_extents,
            yaw,
        }
    }

    fn axes(&self) -> [Vector2<f64>; 2] {
        let (s, c) = self.yaw.sin_cos();
        [Vector2::new(c, s), Vector2::new(-s, c)]
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let [ax, ay] = self.axes();
        let c = Vector2::new(self.center[0], self.center[1]);
        let x = ax * self.half_extents[0];
        let y = ay * self.half_extents[1];
        [c - x - y, c + x - y, c + x + y, c - x + y]
    }

    fn project(&self, axis: &Vector2<f64>) -> (f64, f64) {
        let c = Vector2::new(self.center[0], self.center[1]).dot(axis);
        let [ax, ay] = self.axes();
        let r = self.half_extents[0] * ax.dot(axis).abs() + self.half_extents[1] * ay.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test over the four face normals. Touching boxes
    /// count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox2D) -> bool {
        self.axes().iter().chain(other.axes().iter()).all(|axis| {
            let (a_min, a_max) = self.project(axis);
            let (b_min, b_max) = other.project(axis);
            a_max >= b_min && b_max >= a_min
        })
    }
}

/// Even-odd ray casting. Points exactly on an edge may land on either side.
pub fn point_in_polygon(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = polygon[i];
        let [xj, yj] = polygon[j];
        if (yi > p[1]) != (yj > p[1]) {
            let x_cross = xj + (p[1] - yj) * (xi - xj) / (yi - yj);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// At least three vertices, not all on one line.
pub fn validate_polygon(polygon: &[[f64; 2]]) -> Result<(), GeometryError> {
    if polygon.len() < 3 {
        return Err(GeometryError::TooFewVertices(polygon.len()));
    }
    if polygon.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("polygon"));
    }
    let a = polygon[0];
    let non_collinear = polygon.iter().skip(1).any(|b| {
        polygon.iter().skip(2).any(|c| {
            let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            cross.abs() > 1e-12
        })
    });
    if non_collinear {
        Ok(())
    } else {
        Err(GeometryError::Collinear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rejects_scaled_rotation() {
        let r = Matrix3::identity() * 1.01;
        assert!(matches!(
            RigidTransform::new(r, Vector3::zeros()),
            Err(GeometryError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn rejects_reflection() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            RigidTransform::new(r, Vector3::zeros()),
            Err(GeometryError::Reflection { .. })
        ));
    }

    #[test]
    fn inverse_round_trips() {
        let t = RigidTransform::from_yaw(0.7, Vector3::new(1.0, -2.0, 0.5));
        let p = Vector3::new(3.0, 4.0, 5.0);
        let back = t.inverse().apply(&t.apply(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn yaw_extraction() {
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        assert!((t.yaw() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn pose2_round_trip() {
        let pose = Pose2 { x: 4.0, y: -1.0, yaw: 0.3 };
        let p = [10.0, 2.0];
        let back = pose.to_world(pose.to_local(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn sat_separated_and_touching() {
        let a = OrientedBox2D::new([0.0, 0.0], [1.0, 1.0], 0.0);
        let b = OrientedBox2D::new([3.0, 0.0], [1.0, 1.0], 0.0);
        let c = OrientedBox2D::new([2.0, 0.0], [1.0, 1.0], 0.0);
        assert!(!a.overlaps(&b));
        assert!(a.overlaps(&c));
        // rotated diamond whose corner pokes into the square
        let d = OrientedBox2D::new([2.3, 0.0], [1.0, 1.0], std::f64::consts::FRAC_PI_4);
        assert!(a.overlaps(&d));
        // diamond whose bounding box overlaps but whose corner stays clear
        let e = OrientedBox2D::new([2.0, 2.0], [1.0, 1.0], std::f64::consts::FRAC_PI_4);
        assert!(!a.overlaps(&e));
    }

    #[test]
    fn even_odd_square() {
        let sq = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        assert!(point_in_polygon([2.0, 2.0], &sq));
        assert!(!point_in_polygon([5.0, 2.0], &sq));
        assert!(!point_in_polygon([2.0, -0.1], &sq));
    }

    #[test]
    fn polygon_validation() {
        assert_eq!(validate_polygon(&[[0.0, 0.0], [1.0, 0.0]]), Err(GeometryError::TooFewVertices(2)));
        assert_eq!(
            validate_polygon(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            Err(GeometryError::Collinear)
        );
        assert!(validate_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).is_ok());
    }
}
