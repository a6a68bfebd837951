//! Levenberg–Marquardt refinement of the six pose parameters.
//!
//! Updates are applied on the left: `R ← exp(ω)·R`, `t ← t + δt`, so the
//! Jacobian of a camera-frame point `q = R·p + t` is `[-[R·p]×, I]`.

use nalgebra::{Matrix6, Vector6};

use super::{Correspondence, PnpError};
use crate::geometry::{exp_so3, orthonormalize, skew, CameraIntrinsics, RigidTransform};

const MAX_ITERATIONS: usize = 100;

pub(super) fn cost(pose: &RigidTransform, data: &[Correspondence], cam: &CameraIntrinsics) -> f64 {
    let mut total = 0.0;
    for c in data {
        let q = pose.transform_point(&c.model_point);
        match cam.project_point(&q) {
            Some(uv) => total += (uv - c.image_point).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    total
}

fn normal_equations(
    pose: &RigidTransform,
    data: &[Correspondence],
    cam: &CameraIntrinsics,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in data {
        let rp = pose.rotation() * c.model_point;
        let q = rp + pose.translation();
        let inv_z = 1.0 / q.z;
        let u = cam.fx * q.x * inv_z + cam.cx;
        let v = cam.fy * q.y * inv_z + cam.cy;
        let r = [u - c.image_point.x, v - c.image_point.y];

        // d(u, v)/dq
        let du = nalgebra::RowVector3::new(cam.fx * inv_z, 0.0, -cam.fx * q.x * inv_z * inv_z);
        let dv = nalgebra::RowVector3::new(0.0, cam.fy * inv_z, -cam.fy * q.y * inv_z * inv_z);
        let dq_dw = -skew(&rp);
        for (res, dproj) in r.iter().zip([du, dv]) {
            let jw = dproj * dq_dw;
            let row = Vector6::new(jw[0], jw[1], jw[2], dproj[0], dproj[1], dproj[2]);
            h += row * row.transpose();
            g += row * *res;
        }
    }
    (h, g)
}

fn apply(pose: &RigidTransform, step: &Vector6<f64>) -> RigidTransform {
    let w = step.fixed_rows::<3>(0).into_owned();
    let dt = step.fixed_rows::<3>(3).into_owned();
    let rotation = exp_so3(&w) * pose.rotation();
    RigidTransform::new(orthonormalize(&rotation), pose.translation() + dt).unwrap_or(*pose)
}

/// Minimizes the summed squared pixel reprojection error starting from `init`.
/// Returns the refined pose with its final cost.
pub(super) fn refine(
    init: &RigidTransform,
    data: &[Correspondence],
    cam: &CameraIntrinsics,
) -> Result<(RigidTransform, f64), PnpError> {
    let mut pose = *init;
    let mut current = cost(&pose, data, cam);
    if !current.is_finite() {
        return Err(PnpError::NoConvergence);
    }
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if current == 0.0 {
            break;
        }
        let (h, g) = normal_equations(&pose, data, cam);
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = apply(&pose, &step);
            let next = cost(&candidate, data, cam);
            if next < current {
                let gain = current - next;
                pose = candidate;
                current = next;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if gain <= 1e-15 * current.max(1e-30) || step.norm() < 1e-15 {
                    return Ok((pose, current));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if current.is_finite() && pose.is_valid() {
        Ok((pose, current))
    } else {
        Err(PnpError::NoConvergence)
    }
}
