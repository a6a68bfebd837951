//! Pose from 2D–3D keypoint correspondences.
//!
//! [`solve_pnp`] is the deterministic inner solver (EPnP initialization
//! followed by Levenberg–Marquardt); [`solve_pnp_ransac`] wraps it in a
//! seeded RANSAC loop.

mod epnp;
mod lm;
mod p3p;
mod ransac;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidTransform, Vec2, Vec3};

pub use ransac::solve_pnp_ransac;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { required: usize, got: usize },
    #[error("model points are collinear or coincident")]
    DegenerateConfiguration,
    #[error("pose refinement did not converge")]
    NoConvergence,
    #[error("best model has {found} inliers, need {required}")]
    InsufficientInliers { found: usize, required: usize },
    #[error("invalid correspondence {index}: {reason}")]
    InvalidCorrespondence { index: usize, reason: &'static str },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub model_point: Vec3,
    pub image_point: Vec2,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(model_point: Vec3, image_point: Vec2, confidence: f64) -> Self {
        Self {
            model_point,
            image_point,
            confidence,
        }
    }

    fn check(&self, index: usize) -> Result<(), PnpError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(PnpError::InvalidCorrespondence {
                index,
                reason: "confidence outside [0, 1]",
            });
        }
        if !self
            .model_point
            .iter()
            .chain(self.image_point.iter())
            .all(|v| v.is_finite())
        {
            return Err(PnpError::InvalidCorrespondence {
                index,
                reason: "non-finite coordinate",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Reprojection distance in pixels below which a correspondence is an inlier.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    /// Stop early once this probability of having drawn an all-inlier sample is reached.
    pub confidence_target: f64,
    pub rng_seed: u64,
    /// Keypoints below this confidence never enter RANSAC.
    pub min_keypoint_confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            inlier_threshold: 6.0,
            min_inliers: 6,
            confidence_target: 0.99,
            rng_seed: 0,
            min_keypoint_confidence: 0.1,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if self.max_iterations < 1 {
            return Err(PnpError::InvalidConfig("max_iterations must be >= 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(PnpError::InvalidConfig("inlier_threshold must be > 0"));
        }
        if self.min_inliers < 4 {
            return Err(PnpError::InvalidConfig("min_inliers must be >= 4"));
        }
        if !(self.confidence_target > 0.0 && self.confidence_target < 1.0) {
            return Err(PnpError::InvalidConfig(
                "confidence_target must be in (0, 1)",
            ));
        }
        if !(0.0..=1.0).contains(&self.min_keypoint_confidence) {
            return Err(PnpError::InvalidConfig(
                "min_keypoint_confidence must be in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub pose: RigidTransform,
    /// Indices into the correspondence slice passed to the solver.
    pub inlier_indices: Vec<usize>,
    /// Mean pixel reprojection error over the inliers.
    pub mean_reprojection_error: f64,
}

/// Pixel reprojection error per correspondence; points behind the camera
/// report `+∞`.
pub fn reprojection_errors(
    pose: &RigidTransform,
    data: &[Correspondence],
    cam: &CameraIntrinsics,
) -> Vec<f64> {
    data.iter()
        .map(|c| {
            cam.project_point(&pose.transform_point(&c.model_point))
                .map_or(f64::INFINITY, |uv| (uv - c.image_point).norm())
        })
        .collect()
}

/// Least-squares pose from at least four correspondences. Coplanar model
/// points are supported; collinear ones are rejected.
pub fn solve_pnp(
    correspondences: &[Correspondence],
    cam: &CameraIntrinsics,
) -> Result<RigidTransform, PnpError> {
    if correspondences.len() < 4 {
        return Err(PnpError::TooFewCorrespondences {
            required: 4,
            got: correspondences.len(),
        });
    }
    for (i, c) in correspondences.iter().enumerate() {
        c.check(i)?;
    }
    let mut inits = epnp::solve(correspondences, cam)?;
    // Minimal and near-minimal sets can trap every EPnP start in a local
    // minimum; three-point solutions over each triple cover the true basin.
    if correspondences.len() <= P3P_SEED_LIMIT {
        inits.extend(p3p_candidates(correspondences, cam));
    }
    let mut best: Option<(RigidTransform, f64)> = None;
    for init in inits {
        let Ok((pose, cost)) = lm::refine(&init, correspondences, cam) else {
            continue;
        };
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((pose, cost));
        }
    }
    best.map(|(pose, _)| pose).ok_or(PnpError::NoConvergence)
}

const P3P_SEED_LIMIT: usize = 5;

fn p3p_candidates(data: &[Correspondence], cam: &CameraIntrinsics) -> Vec<RigidTransform> {
    let n = data.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let model = [
                    data[a].model_point,
                    data[b].model_point,
                    data[c].model_point,
                ];
                let image = [
                    data[a].image_point,
                    data[b].image_point,
                    data[c].image_point,
                ];
                out.extend(p3p::solve(model, image, cam));
            }
        }
    }
    out
}
