//! Grunert's three-point pose solution.
//!
//! With unit bearings `b₁, b₂, b₃` and inter-point distances, the depths obey
//! three law-of-cosines equations; substituting `s₂ = u·s₁`, `s₃ = v·s₁`
//! reduces them to a quartic in `v`. Up to four poses result.

use nalgebra::{Complex, Matrix3, Matrix4};

use super::epnp::absolute_orientation;
use crate::geometry::{CameraIntrinsics, RigidTransform, Vec2, Vec3};

fn bearing(cam: &CameraIntrinsics, uv: &Vec2) -> Vec3 {
    let n = cam.normalize(uv);
    Vec3::new(n.x, n.y, 1.0).normalize()
}

/// Real roots of `c[0]·x⁴ + c[1]·x³ + c[2]·x² + c[3]·x + c[4]`.
fn quartic_roots(c: [f64; 5]) -> Vec<f64> {
    if c[0].abs() < 1e-14 * c.iter().map(|v| v.abs()).fold(0.0, f64::max) {
        return Vec::new();
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    #[rustfmt::skip]
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3],
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let eval = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let deriv = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    let roots: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().copied().collect();
    roots
        .into_iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..5 {
                let d = deriv(x);
                if d == 0.0 {
                    break;
                }
                x -= eval(x) / d;
            }
            x
        })
        .collect()
}

/// Newton steps on the law-of-cosines residuals; the quartic root alone is
/// only good to about 1e-9 relative.
fn polish_depths(mut s: Vec3, cos: [f64; 3], d2: [f64; 3]) -> Vec3 {
    // Equation k pairs depths (i, j) opposite to point k.
    let pairs = [(1, 2), (0, 2), (0, 1)];
    for _ in 0..3 {
        let mut r = Vec3::zeros();
        let mut j = Matrix3::zeros();
        for (k, &(i, l)) in pairs.iter().enumerate() {
            r[k] = s[i] * s[i] + s[l] * s[l] - 2.0 * s[i] * s[l] * cos[k] - d2[k];
            j[(k, i)] = 2.0 * s[i] - 2.0 * s[l] * cos[k];
            j[(k, l)] = 2.0 * s[l] - 2.0 * s[i] * cos[k];
        }
        match j.lu().solve(&r) {
            Some(step) if step.iter().all(|v| v.is_finite()) => s -= step,
            _ => break,
        }
    }
    s
}

/// Candidate poses mapping `model` onto the rays through `image`.
pub(super) fn solve(
    model: [Vec3; 3],
    image: [Vec2; 3],
    cam: &CameraIntrinsics,
) -> Vec<RigidTransform> {
    let b = image.map(|uv| bearing(cam, &uv));
    let a2 = (model[1] - model[2]).norm_squared();
    let b2 = (model[0] - model[2]).norm_squared();
    let c2 = (model[0] - model[1]).norm_squared();
    if b2 <= 0.0 {
        return Vec::new();
    }
    let cos_alpha = b[1].dot(&b[2]);
    let cos_beta = b[0].dot(&b[2]);
    let cos_gamma = b[0].dot(&b[1]);

    let p = (a2 - c2) / b2;
    let q = (a2 + c2) / b2;
    let (ca, cb, cg) = (cos_alpha, cos_beta, cos_gamma);
    let coeffs = [
        (p - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (p * (1.0 - p) * cb - (1.0 - q) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (p * p - 1.0 + 2.0 * p * p * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * q * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-p * (1.0 + p) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - q) * ca * cg),
        (1.0 + p).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];

    let mut poses = Vec::new();
    for v in quartic_roots(coeffs) {
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((p - 1.0) * v * v - 2.0 * p * cb * v + 1.0 + p) / denom;
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cb);
        if !(s1_sq > 0.0) || !(u > 0.0) || !(v > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let s = polish_depths(Vec3::new(s1, u * s1, v * s1), [ca, cb, cg], [a2, b2, c2]);
        let camera = [b[0] * s.x, b[1] * s.y, b[2] * s.z];
        if let Some(pose) = absolute_orientation(&model, &camera) {
            poses.push(pose);
        }
    }
    poses
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_with_known_roots() {
        // (x-1)(x-2)(x+3)(x-0.5) = x⁴ - 0.5x³ - 7x² + 9.5x - 3
        let mut r = quartic_roots([1.0, -0.5, -7.0, 9.5, -3.0]);
        r.sort_by(f64::total_cmp);
        assert_eq!(r.len(), 4);
        for (got, want) in r.iter().zip([-3.0, 0.5, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn true_pose_is_among_candidates() {
        let cam = CameraIntrinsics::azure_kinect_720p();
        let model = [
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(-0.05, 0.08, 0.02),
            Vec3::new(0.0, -0.07, 0.05),
        ];
        for (axis, angle) in [
            (Vec3::new(1.0, 0.2, 0.0), 0.8),
            (Vec3::new(0.0, 1.0, 1.0), 2.5),
            (Vec3::z(), 0.1),
        ] {
            let gt = RigidTransform::from_axis_angle(&axis, angle, Vec3::new(0.03, -0.02, 0.9));
            let image = model.map(|p| cam.project_point(&gt.transform_point(&p)).unwrap());
            let found = solve(model, image, &cam).iter().any(|c| {
                (c.translation() - gt.translation()).norm() < 1e-8
                    && (c.rotation() - gt.rotation()).norm() < 1e-8
            });
            assert!(found, "{:?}", solve(model, image, &cam));
        }
    }
}
