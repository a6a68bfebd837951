use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{reprojection_errors, solve_pnp, Correspondence, PnpError, PnpResult, RansacConfig};
use crate::geometry::{CameraIntrinsics, RigidTransform};

const SAMPLE_SIZE: usize = 4;
const MAX_REFITS: usize = 5;

struct Hypothesis {
    pose: RigidTransform,
    /// Positions within the confidence-filtered subset.
    inliers: Vec<usize>,
    mean_error: f64,
}

fn score(
    pose: RigidTransform,
    data: &[Correspondence],
    cam: &CameraIntrinsics,
    threshold: f64,
) -> Hypothesis {
    let errors = reprojection_errors(&pose, data, cam);
    let inliers: Vec<usize> = (0..data.len()).filter(|&i| errors[i] < threshold).collect();
    let mean_error = if inliers.is_empty() {
        f64::INFINITY
    } else {
        inliers.iter().map(|&i| errors[i]).sum::<f64>() / inliers.len() as f64
    };
    Hypothesis {
        pose,
        inliers,
        mean_error,
    }
}

fn beats(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.inliers.len() > b.inliers.len()
        || (a.inliers.len() == b.inliers.len() && a.mean_error < b.mean_error)
}

/// Iterations needed to draw one all-inlier sample with probability `confidence`.
fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let all_inlier = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if all_inlier >= 1.0 {
        return 1;
    }
    if all_inlier <= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - all_inlier).ln()).ceil();
    if n.is_finite() && n >= 1.0 {
        (n as usize).min(cap)
    } else {
        cap
    }
}

/// Seeded RANSAC over four-point samples, followed by a least-squares refit on
/// the consensus set. Keypoints below `cfg.min_keypoint_confidence` are dropped
/// first; the reported inlier indices refer to the input slice.
pub fn solve_pnp_ransac(
    correspondences: &[Correspondence],
    cam: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpResult, PnpError> {
    cfg.validate()?;
    let kept: Vec<usize> = (0..correspondences.len())
        .filter(|&i| correspondences[i].confidence >= cfg.min_keypoint_confidence)
        .collect();
    let data: Vec<Correspondence> = kept.iter().map(|&i| correspondences[i]).collect();
    if data.len() < cfg.min_inliers {
        return Err(PnpError::InsufficientInliers {
            found: data.len(),
            required: cfg.min_inliers,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<Hypothesis> = None;
    let mut budget = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < budget {
        iteration += 1;
        let mut sample = rand::seq::index::sample(&mut rng, data.len(), SAMPLE_SIZE).into_vec();
        sample.sort_unstable();
        let subset: Vec<Correspondence> = sample.iter().map(|&i| data[i]).collect();
        let Ok(pose) = solve_pnp(&subset, cam) else {
            continue;
        };
        let hyp = score(pose, &data, cam, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|b| beats(&hyp, b)) {
            let ratio = hyp.inliers.len() as f64 / data.len() as f64;
            budget = required_iterations(ratio, cfg.confidence_target, cfg.max_iterations);
            best = Some(hyp);
        }
    }

    let Some(mut best) = best.filter(|b| b.inliers.len() >= SAMPLE_SIZE) else {
        return Err(PnpError::InsufficientInliers {
            found: 0,
            required: cfg.min_inliers,
        });
    };

    for _ in 0..MAX_REFITS {
        let consensus: Vec<Correspondence> = best.inliers.iter().map(|&i| data[i]).collect();
        let Ok(pose) = solve_pnp(&consensus, cam) else {
            break;
        };
        let refit = score(pose, &data, cam, cfg.inlier_threshold);
        if refit.inliers.len() < best.inliers.len() || refit.inliers.len() < SAMPLE_SIZE {
            break;
        }
        let converged = refit.inliers == best.inliers;
        best = refit;
        if converged {
            break;
        }
    }

    if best.inliers.len() < cfg.min_inliers {
        return Err(PnpError::InsufficientInliers {
            found: best.inliers.len(),
            required: cfg.min_inliers,
        });
    }
    Ok(PnpResult {
        pose: best.pose,
        inlier_indices: best.inliers.iter().map(|&i| kept[i]).collect(),
        mean_reprojection_error: best.mean_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec2, Vec3};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn model() -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        (0..17)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.11..0.11),
                    rng.random_range(-0.08..0.08),
                    rng.random_range(0.0..0.05),
                )
            })
            .collect()
    }

    fn observe(pose: &RigidTransform) -> Vec<Correspondence> {
        let cam = CameraIntrinsics::azure_kinect_720p();
        model()
            .iter()
            .map(|p| {
                Correspondence::new(
                    *p,
                    cam.project_point(&pose.transform_point(p)).unwrap(),
                    1.0,
                )
            })
            .collect()
    }

    fn pose() -> RigidTransform {
        RigidTransform::from_axis_angle(
            &Vec3::new(0.3, -1.0, 0.2),
            2.2,
            Vec3::new(0.05, -0.03, 1.0),
        )
    }

    #[test]
    fn no_outliers_matches_direct_solve() {
        let cam = CameraIntrinsics::azure_kinect_720p();
        let data = observe(&pose());
        let direct = solve_pnp(&data, &cam).unwrap();
        let robust = solve_pnp_ransac(&data, &cam, &RansacConfig::default()).unwrap();
        assert_eq!(robust.inlier_indices, (0..17).collect::<Vec<_>>());
        assert!((robust.pose.translation() - direct.translation()).norm() < 1e-9);
        assert!((robust.pose.rotation() - direct.rotation()).norm() < 1e-9);
        assert!(robust.mean_reprojection_error < 1e-6);
    }

    #[test]
    fn deterministic_and_inliers_consistent() {
        let cam = CameraIntrinsics::azure_kinect_720p();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut data = observe(&pose());
        for (i, c) in data.iter_mut().enumerate() {
            if i % 4 == 0 {
                c.image_point =
                    Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
            } else {
                c.image_point += Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        let cfg = RansacConfig {
            rng_seed: 17,
            ..RansacConfig::default()
        };
        let a = solve_pnp_ransac(&data, &cam, &cfg).unwrap();
        let b = solve_pnp_ransac(&data, &cam, &cfg).unwrap();
        assert_eq!(a, b);
        let errs = reprojection_errors(&a.pose, &data, &cam);
        for &i in &a.inlier_indices {
            assert!(errs[i] < cfg.inlier_threshold);
        }
        assert!(a.inlier_indices.len() >= 10);
    }

    #[test]
    fn low_confidence_keypoints_are_excluded() {
        let cam = CameraIntrinsics::azure_kinect_720p();
        let mut data = observe(&pose());
        data[3].confidence = 0.05;
        data[3].image_point = Vec2::new(0.0, 0.0);
        let res = solve_pnp_ransac(&data, &cam, &RansacConfig::default()).unwrap();
        assert!(!res.inlier_indices.contains(&3));
        assert_eq!(res.inlier_indices.len(), 16);
    }

    #[test]
    fn too_few_inliers() {
        let cam = CameraIntrinsics::azure_kinect_720p();
        let data = observe(&pose());
        let err = solve_pnp_ransac(&data[..5], &cam, &RansacConfig::default()).unwrap_err();
        assert_eq!(
            err,
            PnpError::InsufficientInliers {
                found: 5,
                required: 6
            }
        );
        let bad = RansacConfig {
            min_inliers: 3,
            ..RansacConfig::default()
        };
        assert!(matches!(
            solve_pnp_ransac(&data, &cam, &bad),
            Err(PnpError::InvalidConfig(_))
        ));
    }

    #[test]
    fn iteration_budget() {
        assert_eq!(required_iterations(1.0, 0.99, 200), 1);
        assert_eq!(required_iterations(0.0, 0.99, 200), 200);
        // (1 - 0.5^4)^n <= 0.01  =>  n = ceil(ln 0.01 / ln 0.9375) = 72
        assert_eq!(required_iterations(0.5, 0.99, 200), 72);
    }
}
