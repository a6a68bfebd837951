//! Rigid transforms, pinhole projection and farthest point sampling.
//!
//! Pixel convention: `(u, v)` with the origin at the top-left pixel centre,
//! `u` to the right and `v` downward. Camera frame is right-handed with `z`
//! along the optical axis.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Tolerance on `R·Rᵀ − I` and `det(R) − 1` for a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Largest orthonormality drift that is silently repaired when loading poses.
pub const REORTHONORMALIZE_LIMIT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (error {error:.3e})")]
    NotOrthonormal { error: f64 },
    #[error("rotation has determinant {det} (expected +1)")]
    Reflection { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("cannot sample {requested} points from a cloud of {available}")]
    TooFewPoints { requested: usize, available: usize },
    #[error("sample count must be at least 1")]
    EmptySample,
}

/// Proper rigid motion `p ↦ R·p + t`, translation in meters.
#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (axis_angle, t) = (self.rotation_vector(), self.translation);
        f.debug_struct("RigidTransform")
            .field("rotvec", &[axis_angle.x, axis_angle.y, axis_angle.z])
            .field("t", &[t.x, t.y, t.z])
            .finish()
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
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper orthonormal
    /// within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let error = orthonormality_error(&rotation);
        if error > ROTATION_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { error });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::Reflection { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Like [`RigidTransform::new`] but repairs small drift (up to
    /// [`REORTHONORMALIZE_LIMIT`]) by projecting onto SO(3).
    pub fn new_repaired(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let error = orthonormality_error(&rotation);
        if error > REORTHONORMALIZE_LIMIT {
            return Err(GeometryError::NotOrthonormal { error });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > REORTHONORMALIZE_LIMIT {
            return Err(GeometryError::Reflection { det });
        }
        // Already-valid rotations pass through bit for bit.
        Self::new(rotation, translation)
            .or_else(|_| Self::new(orthonormalize(&rotation), translation))
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let unit = axis.normalize();
        Self::from_rotation_vector(&(unit * angle), translation)
    }

    pub fn from_rotation_vector(rotvec: &Vec3, translation: Vec3) -> Self {
        Self {
            rotation: exp_so3(rotvec),
            translation,
        }
    }

    /// Quaternion in `(w, x, y, z)` order; normalized on ingest.
    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Result<Self, GeometryError> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if !(quat.norm() > 0.0) || !q.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Self::new(
            orthonormalize(unit.to_rotation_matrix().matrix()),
            translation,
        )
    }

    /// `(w, x, y, z)` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vec3) -> Self {
        Self {
            rotation: self.rotation,
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

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Axis-angle vector of the rotation (angle in radians).
    pub fn rotation_vector(&self) -> Vec3 {
        log_so3(&self.rotation)
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        #[rustfmt::skip]
        let m = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        m
    }

    /// Parses a row-major 4×4 matrix, repairing rotation drift below
    /// [`REORTHONORMALIZE_LIMIT`] and rejecting anything larger.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose matrix"));
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        let expected = [0.0, 0.0, 0.0, 1.0];
        if bottom
            .iter()
            .zip(expected)
            .any(|(a, b)| (a - b).abs() > REORTHONORMALIZE_LIMIT)
        {
            return Err(GeometryError::NotOrthonormal {
                error: bottom
                    .iter()
                    .zip(expected)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            });
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new_repaired(rotation, Vec3::new(m[3], m[7], m[11]))
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.rotation, self.translation).is_ok()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let m = <[f64; 16]>::deserialize(deserializer)?;
        RigidTransform::from_row_major(&m).map_err(serde::de::Error::custom)
    }
}

/// Frobenius norm of `R·Rᵀ − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).norm()
}

/// Nearest proper rotation in the Frobenius sense (polar decomposition).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vec3) -> Matrix3<f64> {
    Rotation3::new(*w).into_inner()
}

pub fn log_so3(r: &Matrix3<f64>) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Geodesic angle of `R` in radians, accurate near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = 0.5
        * Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    sin.atan2(cos.clamp(-1.0, 1.0))
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::azure_kinect_720p()
    }
}

impl CameraIntrinsics {
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

    /// 1280×720 colour-camera layout with a centred principal point.
    pub fn azure_kinect_720p() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280,
            height: 720,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidIntrinsics(msg));
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Projects a camera-frame point; `None` if it is not in front of the camera.
    pub fn project_point(&self, p: &Vec3) -> Option<Vec2> {
        if p.z > 0.0 {
            Some(Vec2::new(
                self.fx * p.x / p.z + self.cx,
                self.fy * p.y / p.z + self.cy,
            ))
        } else {
            None
        }
    }

    /// Normalized image coordinates `((u − cx)/fx, (v − cy)/fy)`.
    pub fn normalize(&self, uv: &Vec2) -> Vec2 {
        Vec2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    pub fn contains(&self, uv: &Vec2) -> bool {
        uv.x >= -0.5
            && uv.y >= -0.5
            && uv.x < self.width as f64 - 0.5
            && uv.y < self.height as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Model,
    Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud3 {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl PointCloud3 {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite("point cloud"));
        }
        Ok(Self { points, frame })
    }

    pub fn model(points: Vec<Vec3>) -> Self {
        Self {
            points,
            frame: Frame::Model,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub uv: Vec2,
    pub depth: Option<f64>,
    /// Index of the originating point in the projected cloud.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelPointSet {
    pub points: Vec<PixelPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub pixels: PixelPointSet,
    /// Points with `z ≤ 0` that were dropped.
    pub culled: usize,
}

/// Maps model-frame points into the camera frame: `p' = R·p + t`.
pub fn transform_points(points: &PointCloud3, pose: &RigidTransform) -> PointCloud3 {
    PointCloud3 {
        points: points
            .points
            .iter()
            .map(|p| pose.transform_point(p))
            .collect(),
        frame: Frame::Camera,
    }
}

pub fn project(points: &PointCloud3, cam: &CameraIntrinsics) -> Projection {
    let mut pixels = Vec::with_capacity(points.len());
    let mut culled = 0;
    for (source, p) in points.points.iter().enumerate() {
        match cam.project_point(p) {
            Some(uv) => pixels.push(PixelPoint {
                uv,
                depth: Some(p.z),
                source,
            }),
            None => culled += 1,
        }
    }
    Projection {
        pixels: PixelPointSet { points: pixels },
        culled,
    }
}

pub fn backproject(
    pixel: &Vec2,
    depth: f64,
    cam: &CameraIntrinsics,
) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vec3::new(
        (pixel.x - cam.cx) * depth / cam.fx,
        (pixel.y - cam.cy) * depth / cam.fy,
        depth,
    ))
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Greedy farthest point sampling.
///
/// The seed is the point farthest from the centroid. Every distance tie,
/// including the seed choice, goes to the lexicographically smallest point
/// (then the lowest index), so the selected point set does not depend on the
/// input order. Greedy FPS is prefix-stable: the first `j` picks of a run with
/// `k > j` equal a run with `k = j`.
pub fn farthest_point_sampling(points: &[Vec3], k: usize) -> Result<Vec<usize>, GeometryError> {
    if k == 0 {
        return Err(GeometryError::EmptySample);
    }
    if k > points.len() {
        return Err(GeometryError::TooFewPoints {
            requested: k,
            available: points.len(),
        });
    }

    // Summing in lexicographic order keeps the centroid bit-identical under
    // permutation of the input.
    let mut sorted: Vec<&Vec3> = points.iter().collect();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    let centroid = sorted.iter().fold(Vec3::zeros(), |acc, p| acc + *p) / points.len() as f64;

    let better = |i: usize, di: f64, j: usize, dj: f64| -> bool {
        match di.total_cmp(&dj) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match lex_cmp(&points[i], &points[j]) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => i < j,
            },
        }
    };
    let argbest = |dist: &[f64]| -> usize {
        let mut best = 0;
        for i in 1..dist.len() {
            if better(i, dist[i], best, dist[best]) {
                best = i;
            }
        }
        best
    };

    let from_centroid: Vec<f64> = points
        .iter()
        .map(|p| (p - centroid).norm_squared())
        .collect();
    let seed = argbest(&from_centroid);

    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; points.len()];
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = seed;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let anchor = points[current];
        for (i, p) in points.iter().enumerate() {
            let d = (p - anchor).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
        // Taken points have distance 0 to themselves, but duplicates may also
        // sit at 0; mask taken ones explicitly so exhaustion returns every index.
        let masked: Vec<f64> = min_dist
            .iter()
            .zip(&taken)
            .map(|(&d, &t)| if t { f64::NEG_INFINITY } else { d })
            .collect();
        current = argbest(&masked);
    }
    Ok(selected)
}
