//! EPnP closed-form initialization.
//!
//! World points are expressed as barycentric combinations of four control
//! points (three for planar sets). The camera-frame control points lie in the
//! null space of a 2n × 3m system; the null-space mixing coefficients are
//! recovered from the distance constraints between control points, for null
//! space dimensions 1..=4, and each candidate is scored by reprojection error.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use super::{reprojection_errors, Correspondence, PnpError};
use crate::geometry::{orthonormalize, CameraIntrinsics, RigidTransform, Vec2, Vec3};

/// Below this ratio of smallest to largest spread the set is treated as planar.
const PLANAR_RATIO: f64 = 1e-10;
/// Below this ratio of middle to largest spread the set is collinear.
const COLLINEAR_RATIO: f64 = 1e-12;

struct ControlFrame {
    /// Control points in the model frame (`m` of them, 3 or 4).
    points: Vec<Vec3>,
    /// Barycentric weights, one row of length `m` per correspondence.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(world: &[Vec3]) -> Result<ControlFrame, PnpError> {
    let n = world.len() as f64;
    let centroid = world.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in world {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if !(lambda[0] > 0.0) || lambda[1] < COLLINEAR_RATIO * lambda[0] {
        return Err(PnpError::DegenerateConfiguration);
    }
    let axes = if lambda[2] < PLANAR_RATIO * lambda[0] {
        2
    } else {
        3
    };

    let mut points = vec![centroid];
    let mut dirs = Vec::with_capacity(axes);
    for k in 0..axes {
        let v: Vec3 = eig.eigenvectors.column(order[k]).into();
        let scale = (lambda[k] / n).sqrt();
        points.push(centroid + v * scale);
        dirs.push((v, scale));
    }
    let alphas = world
        .iter()
        .map(|p| {
            let d = p - centroid;
            let mut row = vec![0.0; axes + 1];
            for (k, (v, scale)) in dirs.iter().enumerate() {
                row[k + 1] = v.dot(&d) / scale;
            }
            row[0] = 1.0 - row[1..].iter().sum::<f64>();
            row
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

/// Least-squares solve via SVD; `None` when the system is unusable.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12)
        .ok()
        .filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Distance-preservation residuals and Jacobian for null-space coefficients.
fn beta_system(
    null: &[Vec<Vec3>],
    dist2: &[(usize, usize, f64)],
    beta: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let dims = beta.len();
    let mut r = DVector::zeros(dist2.len());
    let mut j = DMatrix::zeros(dist2.len(), dims);
    for (row, &(a, b, d2)) in dist2.iter().enumerate() {
        let diffs: Vec<Vec3> = (0..dims).map(|k| null[k][a] - null[k][b]).collect();
        let combined = diffs
            .iter()
            .zip(beta)
            .fold(Vec3::zeros(), |acc, (d, bk)| acc + d * *bk);
        r[row] = combined.norm_squared() - d2;
        for k in 0..dims {
            j[(row, k)] = 2.0 * combined.dot(&diffs[k]);
        }
    }
    (r, j)
}

/// Linearized estimate of the betas from products `β_k β_l`.
fn initial_betas(
    null: &[Vec<Vec3>],
    dist2: &[(usize, usize, f64)],
    dims: usize,
) -> Option<Vec<f64>> {
    let full: Vec<(usize, usize)> = (0..dims)
        .flat_map(|k| (k..dims).map(move |l| (k, l)))
        .collect();
    // With too few distance constraints for every product, keep only β₁β_l.
    let products: Vec<(usize, usize)> = if full.len() <= dist2.len() {
        full
    } else {
        (0..dims).map(|l| (0, l)).collect()
    };
    let mut a = DMatrix::zeros(dist2.len(), products.len());
    let mut rhs = DVector::zeros(dist2.len());
    for (row, &(p, q, d2)) in dist2.iter().enumerate() {
        for (col, &(k, l)) in products.iter().enumerate() {
            let dk = null[k][p] - null[k][q];
            let dl = null[l][p] - null[l][q];
            a[(row, col)] = if k == l {
                dk.norm_squared()
            } else {
                2.0 * dk.dot(&dl)
            };
        }
        rhs[row] = d2;
    }
    let mut x = lstsq(&a, &rhs)?;
    // β₁² must be positive; a global sign flip of all products fixes it.
    if x[0] < 0.0 {
        x = -x;
    }
    let b1 = x[0].sqrt();
    if !(b1 > 0.0) {
        return None;
    }
    let mut beta = vec![0.0; dims];
    beta[0] = b1;
    for (col, &(k, l)) in products.iter().enumerate() {
        if k == 0 && l > 0 {
            beta[l] = x[col] / b1;
        }
    }
    Some(beta)
}

fn gauss_newton(null: &[Vec<Vec3>], dist2: &[(usize, usize, f64)], beta: &mut [f64]) {
    for _ in 0..10 {
        let (r, j) = beta_system(null, dist2, beta);
        let Some(step) = lstsq(&j, &(-r)) else { return };
        for (b, s) in beta.iter_mut().zip(step.iter()) {
            *b += s;
        }
        if step.norm() < 1e-14 {
            return;
        }
    }
}

/// Rigid alignment of model points onto camera points (Kabsch, no scale).
pub(super) fn absolute_orientation(world: &[Vec3], camera: &[Vec3]) -> Option<RigidTransform> {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cc = camera.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (c - cc) * (w - cw).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let rotation = orthonormalize(&h);
    let translation = cc - rotation * cw;
    RigidTransform::new(rotation, translation).ok()
}

/// Candidate poses, best reprojection score first.
pub(super) fn solve(
    correspondences: &[Correspondence],
    cam: &CameraIntrinsics,
) -> Result<Vec<RigidTransform>, PnpError> {
    let world: Vec<Vec3> = correspondences.iter().map(|c| c.model_point).collect();
    let image: Vec<Vec2> = correspondences
        .iter()
        .map(|c| cam.normalize(&c.image_point))
        .collect();
    let frame = control_frame(&world)?;
    let m = frame.points.len();

    let mut mtm = DMatrix::<f64>::zeros(3 * m, 3 * m);
    for (alpha, xy) in frame.alphas.iter().zip(&image) {
        let mut rx = DVector::<f64>::zeros(3 * m);
        let mut ry = DVector::<f64>::zeros(3 * m);
        for j in 0..m {
            rx[3 * j] = alpha[j];
            rx[3 * j + 2] = -alpha[j] * xy.x;
            ry[3 * j + 1] = alpha[j];
            ry[3 * j + 2] = -alpha[j] * xy.y;
        }
        mtm += &rx * rx.transpose() + &ry * ry.transpose();
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let max_dims = if m == 4 { 4 } else { 3 };
    let null: Vec<Vec<Vec3>> = order[..max_dims]
        .iter()
        .map(|&col| {
            let v = eig.eigenvectors.column(col);
            (0..m)
                .map(|j| Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
                .collect()
        })
        .collect();
    let dist2: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, (frame.points[a] - frame.points[b]).norm_squared()))
        .collect();

    // Each null-space dimension starts Gauss-Newton from its own linearized
    // estimate and from every lower-dimensional solution padded with zeros.
    let mut candidates: Vec<(f64, RigidTransform)> = Vec::new();
    let mut solved: Vec<Vec<f64>> = Vec::new();
    for dims in 1..=max_dims {
        let mut starts: Vec<Vec<f64>> = initial_betas(&null, &dist2, dims).into_iter().collect();
        starts.extend(solved.iter().map(|b| {
            let mut padded = b.clone();
            padded.resize(dims, 0.0);
            padded
        }));
        let mut this_dim = Vec::new();
        for mut beta in starts {
            gauss_newton(&null, &dist2, &mut beta);
            if let Some((score, pose)) =
                pose_from_betas(&beta, &null, &frame, &world, correspondences, cam)
            {
                candidates.push((score, pose));
            }
            this_dim.push(beta);
        }
        solved.extend(this_dim);
    }
    if candidates.is_empty() {
        return Err(PnpError::NoConvergence);
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(candidates.into_iter().map(|(_, pose)| pose).collect())
}

fn pose_from_betas(
    beta: &[f64],
    null: &[Vec<Vec3>],
    frame: &ControlFrame,
    world: &[Vec3],
    correspondences: &[Correspondence],
    cam: &CameraIntrinsics,
) -> Option<(f64, RigidTransform)> {
    let controls: Vec<Vec3> = (0..frame.points.len())
        .map(|j| {
            beta.iter()
                .enumerate()
                .fold(Vec3::zeros(), |acc, (k, b)| acc + null[k][j] * *b)
        })
        .collect();
    let mut camera: Vec<Vec3> = frame
        .alphas
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .zip(&controls)
                .fold(Vec3::zeros(), |acc, (a, c)| acc + c * *a)
        })
        .collect();
    if camera.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        camera.iter_mut().for_each(|p| *p = -*p);
    }
    let pose = absolute_orientation(world, &camera)?;
    let score = reprojection_errors(&pose, correspondences, cam)
        .iter()
        .map(|e| e * e)
        .sum::<f64>();
    score.is_finite().then_some((score, pose))
}
