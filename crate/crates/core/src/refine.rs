//! Depth-based translation refinement.
//!
//! Predicted surface depths are compared against a measured depth image and
//! the object is slid along the optical ray through its origin by a robust
//! mean of the depth residuals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PointCloud3, RigidTransform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("translation z must be positive, got {0}")]
    ZeroDepthAxis(f64),
    #[error("no residuals to aggregate")]
    EmptyResiduals,
    #[error("invalid depth image: {0}")]
    InvalidDepth(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error("surface point set is empty")]
    EmptySurface,
}

/// Metric depth per pixel, row-major. Zero marks a hole.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, RefineError> {
        if data.len() != width as usize * height as usize {
            return Err(RefineError::InvalidDepth(format!(
                "{} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(RefineError::InvalidDepth(format!("value {bad}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// An image with every pixel a hole.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raw value at a pixel; `None` outside the image.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        (x < self.width && y < self.height).then(|| self.data[(y * self.width + x) as usize])
    }

    /// Writes a value, ignoring coordinates outside the image.
    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        if x < self.width && y < self.height {
            self.data[(y * self.width + x) as usize] = depth.max(0.0);
        }
    }

    /// Nearest-pixel depth at a continuous position; holes read as `None`.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f64> {
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        self.get(x as u32, y as u32).filter(|d| *d > 0.0)
    }
}

/// Axis-aligned pixel rectangle `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, RefineError> {
        let b = Self { x, y, w, h };
        if ![x, y, w, h].iter().all(|v| v.is_finite()) || !(w > 0.0 && h > 0.0) {
            return Err(RefineError::InvalidBox(format!("{b:?}")));
        }
        Ok(b)
    }

    /// Tightest box around the points, or `None` for an empty set.
    pub fn enclosing(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (u, v) in points {
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
        lo.0.is_finite().then(|| Self {
            x: lo.0,
            y: lo.1,
            w: (hi.0 - lo.0).max(1.0),
            h: (hi.1 - lo.1).max(1.0),
        })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x && u < self.x + self.w && v >= self.y && v < self.y + self.h
    }

    pub fn intersects_image(&self, width: u32, height: u32) -> bool {
        self.x < width as f64
            && self.y < height as f64
            && self.x + self.w > 0.0
            && self.y + self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub surface_sample_count: usize,
    pub near_fraction: f64,
    /// Kernel width σ_w in meters.
    pub weight_scale: f64,
    pub min_valid_points: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            surface_sample_count: 500,
            near_fraction: 0.3,
            weight_scale: 0.03,
            min_valid_points: 10,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.near_fraction > 0.0 && self.near_fraction <= 1.0) {
            return Err(RefineError::InvalidConfig(format!(
                "near_fraction {}",
                self.near_fraction
            )));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return Err(RefineError::InvalidConfig(format!(
                "weight_scale {}",
                self.weight_scale
            )));
        }
        if self.min_valid_points < 3 || self.surface_sample_count < self.min_valid_points {
            return Err(RefineError::InvalidConfig(format!(
                "need surface_sample_count ({}) >= min_valid_points ({}) >= 3",
                self.surface_sample_count, self.min_valid_points
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Refined,
    /// Too few usable depth samples; the input pose is returned unchanged.
    InsufficientValidPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: RigidTransform,
    /// Aggregated depth shift `E` in meters (0 when not refined).
    pub shift: f64,
    pub points_used: usize,
    pub status: RefineStatus,
}

/// Normalized Gaussian-kernel mean of the residuals.
pub fn weighted_shift(residuals: &[f64], sigma: f64) -> Result<f64, RefineError> {
    if residuals.is_empty() {
        return Err(RefineError::EmptyResiduals);
    }
    if !(sigma > 0.0) {
        return Err(RefineError::InvalidConfig(format!("weight_scale {sigma}")));
    }
    // Shifting exponents by the smallest d² leaves normalized weights intact
    // and keeps the largest weight at exactly 1.
    let min_sq = residuals
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    let s2 = sigma * sigma;
    let (mut num, mut den) = (0.0, 0.0);
    for d in residuals {
        let w = (-(d * d - min_sq) / s2).exp();
        num += w * d;
        den += w;
    }
    Ok(num / den)
}

/// Depth residuals `measured − predicted` for the near surface points inside `bbox`.
fn residuals(
    pose: &RigidTransform,
    surface: &PointCloud3,
    bbox: &BoundingBox,
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    near_fraction: f64,
) -> Vec<f64> {
    let mut inside: Vec<(f64, f64, f64)> = surface
        .points
        .iter()
        .filter_map(|p| {
            let q = pose.transform_point(p);
            let uv = cam.project_point(&q)?;
            bbox.contains(uv.x, uv.y).then_some((q.z, uv.x, uv.y))
        })
        .collect();
    // Stable sort keeps ties in surface order.
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let keep = ((inside.len() as f64 * near_fraction).ceil() as usize).min(inside.len());
    inside[..keep]
        .iter()
        .filter_map(|&(z, u, v)| depth.sample_nearest(u, v).map(|m| m - z))
        .collect()
}

/// Slides `pose` along the ray through its origin so the visible surface
/// agrees with the measured depth. The rotation is never touched.
pub fn refine_translation(
    pose: &RigidTransform,
    surface: &PointCloud3,
    bbox: &BoundingBox,
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Result<Refinement, RefineError> {
    cfg.validate()?;
    if surface.is_empty() {
        return Err(RefineError::EmptySurface);
    }
    if depth.width() != cam.width || depth.height() != cam.height {
        return Err(RefineError::InvalidDepth(format!(
            "{}x{} image for a {}x{} camera",
            depth.width(),
            depth.height(),
            cam.width,
            cam.height
        )));
    }
    let t = *pose.translation();
    if !(t.z > 0.0) {
        return Err(RefineError::ZeroDepthAxis(t.z));
    }

    let d = residuals(pose, surface, bbox, depth, cam, cfg.near_fraction);
    if d.len() < cfg.min_valid_points {
        return Ok(Refinement {
            pose: *pose,
            shift: 0.0,
            points_used: d.len(),
            status: RefineStatus::InsufficientValidPoints,
        });
    }
    let shift = weighted_shift(&d, cfg.weight_scale)?;
    let scale = (t.z + shift) / t.z;
    if !(scale > 0.0) {
        return Err(RefineError::ZeroDepthAxis(t.z + shift));
    }
    Ok(Refinement {
        pose: pose.with_translation(t * scale),
        shift,
        points_used: d.len(),
        status: RefineStatus::Refined,
    })
}
