//! Per-frame estimation (PnP, depth refinement, pose-based state scores)
//! followed by sequential temporal fusion, and evaluation against ground
//! truth.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    detect_state_from_poses, AssemblyGraph, PartId, StateDetectionConfig, StateDistribution,
    StateId,
};
use crate::dataset::{
    DatasetError, DetectionFile, DetectionFrame, DetectionInstance, ManifestEntry, Sequence,
};
use crate::fusion::{pose2state, FusionState, FusionWeights};
use crate::geometry::{CameraIntrinsics, RigidTransform, Vec2};
use crate::metrics::{PoseErrorRecord, SequenceReport, ADD_THRESHOLD_MM};
use crate::pnp::{solve_pnp_ransac, Correspondence, RansacConfig};
use crate::refine::{refine_translation, DepthImage, RefineConfig, RefineStatus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown assembly {0}")]
    UnknownAssembly(String),
    #[error("frame {frame}: {message}")]
    Misaligned { frame: u64, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Everything that tunes estimation; paths live with the caller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub fusion: FusionWeights,
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub state_detection: StateDetectionConfig,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |e: String| PipelineError::InvalidConfig(e);
        self.fusion.validate().map_err(|e| err(e.to_string()))?;
        self.ransac.validate().map_err(|e| err(e.to_string()))?;
        self.refine.validate().map_err(|e| err(e.to_string()))?;
        self.state_detection
            .validate()
            .map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartEstimate {
    pub pose: RigidTransform,
    pub inliers: usize,
    /// Mean inlier reprojection error in pixels.
    pub reprojection_px: f64,
    /// Depth shift applied by refinement, meters.
    pub refine_shift: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFailure {
    pub part: PartId,
    pub reason: String,
}

/// Output of the per-frame stage, before temporal fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStage {
    pub frame: u64,
    pub poses: BTreeMap<PartId, PartEstimate>,
    pub failures: Vec<PartFailure>,
    pub dl: StateDistribution,
    pub pose_based: StateDistribution,
    pub base_observed: bool,
}

/// One line of the estimates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub frame: u64,
    pub assembly: String,
    pub poses: BTreeMap<PartId, PartEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PartFailure>,
    pub dl: StateDistribution,
    pub pose_based: StateDistribution,
    pub fused: StateDistribution,
    pub state: StateId,
    /// The fused numerator was all zero and a uniform distribution was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// Per-frame seed so RANSAC draws do not depend on processing order.
fn ransac_seed(base: u64, frame: u64, part_index: usize) -> u64 {
    base ^ frame.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (part_index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Highest-confidence instance per known part; earlier instances win ties.
fn best_instances<'a>(
    det: &'a DetectionFrame,
    graph: &AssemblyGraph,
) -> BTreeMap<&'a str, &'a DetectionInstance> {
    let mut best: BTreeMap<&str, &DetectionInstance> = BTreeMap::new();
    for inst in det
        .instances
        .iter()
        .filter(|i| graph.part(&i.part).is_some())
    {
        let slot = best.entry(&inst.part).or_insert(inst);
        if inst.confidence > slot.confidence {
            *slot = inst;
        }
    }
    best
}

/// Class scores of the base part's detection, or of the most confident
/// detection when the base is missing; uniform without any detection.
fn dl_distribution(
    best: &BTreeMap<&str, &DetectionInstance>,
    graph: &AssemblyGraph,
    failures: &mut Vec<PartFailure>,
) -> StateDistribution {
    let n = graph.state_count();
    let source = best.get(graph.base_part().as_str()).copied().or_else(|| {
        best.values()
            .copied()
            .fold(None, |acc: Option<&DetectionInstance>, i| match acc {
                Some(a) if a.confidence >= i.confidence => Some(a),
                _ => Some(i),
            })
    });
    let Some(inst) = source else {
        return StateDistribution::uniform(n);
    };
    if inst.scores.len() != n {
        failures.push(PartFailure {
            part: inst.part.clone(),
            reason: format!("{} class scores for {n} states", inst.scores.len()),
        });
        return StateDistribution::uniform(n);
    }
    StateDistribution::normalize(&inst.scores).unwrap_or_else(|| StateDistribution::uniform(n))
}

/// PnP and refinement for every detected part, then pose-based state scores.
/// `depth` carries the reason when the frame's depth could not be loaded.
pub fn process_frame(
    frame: u64,
    cam: &CameraIntrinsics,
    depth: Result<&DepthImage, String>,
    detections: Option<&DetectionFrame>,
    graph: &AssemblyGraph,
    cfg: &EstimatorConfig,
) -> PoseStage {
    let mut failures = Vec::new();
    let empty = DetectionFrame {
        frame,
        assembly: graph.assembly_id().to_string(),
        instances: Vec::new(),
        extra: BTreeMap::new(),
    };
    let det = detections.unwrap_or(&empty);
    for inst in det
        .instances
        .iter()
        .filter(|i| graph.part(&i.part).is_none())
    {
        failures.push(PartFailure {
            part: inst.part.clone(),
            reason: "part not in assembly".into(),
        });
    }
    if let Err(reason) = &depth {
        failures.push(PartFailure {
            part: graph.base_part().clone(),
            reason: format!("depth unavailable, poses unrefined: {reason}"),
        });
    }
    let best = best_instances(det, graph);
    let dl = dl_distribution(&best, graph, &mut failures);

    let mut poses = BTreeMap::new();
    for (index, (part_id, inst)) in best.iter().enumerate() {
        let part = graph.part(part_id).expect("filtered to known parts");
        let data: Vec<Correspondence> = part
            .keypoints_3d
            .points
            .iter()
            .zip(&inst.keypoints)
            .map(|(p, k)| Correspondence::new(*p, Vec2::new(k[0], k[1]), k[2]))
            .collect();
        let ransac = RansacConfig {
            rng_seed: ransac_seed(cfg.ransac.rng_seed, frame, index),
            ..cfg.ransac
        };
        let fit = match solve_pnp_ransac(&data, cam, &ransac) {
            Ok(fit) => fit,
            Err(e) => {
                failures.push(PartFailure {
                    part: part_id.to_string(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let mut estimate = PartEstimate {
            pose: fit.pose,
            inliers: fit.inlier_indices.len(),
            reprojection_px: fit.mean_reprojection_error,
            refine_shift: 0.0,
            refined: false,
        };
        if let Ok(depth) = depth {
            match refine_translation(
                &fit.pose,
                &part.surface_points,
                &inst.bbox,
                depth,
                cam,
                &cfg.refine,
            ) {
                Ok(r) => {
                    estimate.refined = r.status == RefineStatus::Refined;
                    estimate.refine_shift = r.shift;
                    estimate.pose = r.pose;
                }
                Err(e) => failures.push(PartFailure {
                    part: part_id.to_string(),
                    reason: format!("refinement: {e}"),
                }),
            }
        }
        poses.insert(part_id.to_string(), estimate);
    }

    let observed: BTreeMap<PartId, RigidTransform> =
        poses.iter().map(|(k, v)| (k.clone(), v.pose)).collect();
    let (pose_based, base_observed) =
        match detect_state_from_poses(&observed, graph, &cfg.state_detection) {
            Ok(d) => (d.distribution, d.base_observed),
            Err(e) => {
                failures.push(PartFailure {
                    part: graph.base_part().clone(),
                    reason: format!("state detection: {e}"),
                });
                (StateDistribution::uniform(graph.state_count()), false)
            }
        };
    PoseStage {
        frame,
        poses,
        failures,
        dl,
        pose_based,
        base_observed,
    }
}

/// Applies the fusion step to the stages in order.
pub fn fuse_stages(
    stages: Vec<PoseStage>,
    graph: &AssemblyGraph,
    weights: &FusionWeights,
) -> Result<Vec<FrameEstimate>, PipelineError> {
    let mut state = FusionState::initial(graph.state_count());
    stages
        .into_iter()
        .map(|s| {
            let out = pose2state(&s.dl, &s.pose_based, &state, graph, weights)
                .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
            state = out.next;
            Ok(FrameEstimate {
                frame: s.frame,
                assembly: graph.assembly_id().to_string(),
                poses: s.poses,
                failures: s.failures,
                dl: s.dl,
                pose_based: s.pose_based,
                fused: out.distribution,
                state: out.chosen,
                degenerate: out.degenerate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub estimates: Vec<FrameEstimate>,
    /// Wall-clock milliseconds spent per frame in the per-frame stage.
    pub runtime_ms: Vec<f64>,
}

/// Runs the whole sequence. Frames are processed in parallel; fusion runs
/// afterwards in frame order. Problems confined to one frame are recorded
/// in that frame's estimate.
pub fn run_sequence(
    sequence: &Sequence,
    detections: &DetectionFile,
    graph: &AssemblyGraph,
    cfg: &EstimatorConfig,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    for e in sequence.entries() {
        if e.assembly != graph.assembly_id() {
            return Err(PipelineError::Misaligned {
                frame: e.frame,
                message: format!(
                    "assembly {} but running {}",
                    e.assembly,
                    graph.assembly_id()
                ),
            });
        }
    }
    for d in &detections.frames {
        if d.assembly != graph.assembly_id() {
            return Err(PipelineError::Misaligned {
                frame: d.frame,
                message: format!("detections for assembly {}", d.assembly),
            });
        }
        if sequence
            .entries()
            .binary_search_by_key(&d.frame, |e| e.frame)
            .is_err()
        {
            return Err(PipelineError::Misaligned {
                frame: d.frame,
                message: "detections for a frame missing from the manifest".into(),
            });
        }
    }
    let staged: Vec<(PoseStage, f64)> = sequence
        .entries()
        .par_iter()
        .map(|entry| {
            let start = Instant::now();
            let loaded = sequence.load_frame(entry).map_err(|e| e.to_string());
            let stage = process_frame(
                entry.frame,
                &entry.intrinsics,
                loaded.as_ref().map(|f| &f.depth).map_err(Clone::clone),
                detections.frame(entry.frame),
                graph,
                cfg,
            );
            (stage, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect();
    let (stages, runtime_ms): (Vec<_>, Vec<_>) = staged.into_iter().unzip();
    Ok(RunOutput {
        estimates: fuse_stages(stages, graph, &cfg.fusion)?,
        runtime_ms,
    })
}

/// Scores estimates against the manifest's ground truth. Frames must pair up
/// one to one and in order.
pub fn evaluate(
    estimates: &[FrameEstimate],
    manifest: &[ManifestEntry],
    graph: &AssemblyGraph,
    runtime_ms: Option<&[f64]>,
) -> Result<SequenceReport, PipelineError> {
    for i in 0..estimates.len().max(manifest.len()) {
        match (estimates.get(i), manifest.get(i)) {
            (Some(e), Some(m)) if e.frame == m.frame && e.assembly == m.assembly => {}
            (Some(e), Some(m)) if e.frame == m.frame => {
                return Err(PipelineError::Misaligned {
                    frame: e.frame,
                    message: format!(
                        "estimate for {} but ground truth for {}",
                        e.assembly, m.assembly
                    ),
                })
            }
            (e, m) => {
                let frame = match (e, m) {
                    (Some(e), Some(m)) => e.frame.min(m.frame),
                    (Some(e), None) => e.frame,
                    (None, Some(m)) => m.frame,
                    (None, None) => unreachable!(),
                };
                return Err(PipelineError::Misaligned {
                    frame,
                    message: "estimates and ground truth do not pair up".into(),
                });
            }
        }
    }
    let mut records = Vec::new();
    for (e, m) in estimates.iter().zip(manifest) {
        for (part_id, gt) in &m.gt_poses {
            let Some(part) = graph.part(part_id) else {
                return Err(PipelineError::Misaligned {
                    frame: m.frame,
                    message: format!("unknown part {part_id}"),
                });
            };
            records.push(PoseErrorRecord::evaluate(
                part_id,
                m.frame,
                e.poses.get(part_id).map(|p| &p.pose),
                gt,
                &part.surface_points,
                part.symmetric,
                ADD_THRESHOLD_MM,
            ));
        }
    }
    let predicted: Vec<StateId> = estimates.iter().map(|e| e.state).collect();
    let gt: Vec<StateId> = manifest.iter().map(|m| m.gt_state).collect();
    let mut report = SequenceReport::build(
        manifest.len(),
        &records,
        &predicted,
        &gt,
        graph.state_count(),
        ADD_THRESHOLD_MM,
    )
    .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    if let Some(ms) = runtime_ms.filter(|ms| !ms.is_empty()) {
        report.mean_runtime_ms = Some(ms.iter().sum::<f64>() / ms.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_sequence, read_detections};
    use crate::metrics::pose_errors;
    use crate::simulator::{
        run_scenario, simulate, standard_registry, ScenarioScript, DETECTIONS_FILE, MANIFEST_FILE,
    };

    #[test]
    fn noiseless_sequence_closes() {
        let reg = standard_registry(500).unwrap();
        let graph = reg.get("CornerClamp").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let script = ScenarioScript::new("CornerClamp", &[(0, 4), (1, 4), (2, 4)]);
        let out = run_scenario(&script, &reg, dir.path()).unwrap();
        let seq = load_sequence(&dir.path().join(MANIFEST_FILE)).unwrap();
        let det = read_detections(&dir.path().join(DETECTIONS_FILE)).unwrap();
        let run = run_sequence(&seq, &det, graph, &EstimatorConfig::default()).unwrap();
        assert_eq!(run.estimates.len(), 12);
        for (est, gt) in run.estimates.iter().zip(&out.manifest) {
            assert!(est.failures.is_empty(), "{:?}", est.failures);
            assert_eq!(est.state, gt.gt_state);
            for (part, pose) in &gt.gt_poses {
                let (e_t, e_r) = pose_errors(&est.poses[part].pose, pose);
                assert!(
                    e_t < 1.0 && e_r < 0.1,
                    "frame {} {part}: {e_t} mm {e_r} deg",
                    est.frame
                );
            }
        }
        let report = evaluate(&run.estimates, &out.manifest, graph, None).unwrap();
        assert_eq!(report.state.macro_f1, 100.0);
        assert_eq!(report.add_accuracy, 100.0);
    }

    fn stages_for(
        script: &ScenarioScript,
        graph: &AssemblyGraph,
        cfg: &EstimatorConfig,
    ) -> Vec<PoseStage> {
        simulate(script, graph)
            .unwrap()
            .iter()
            .map(|f| {
                process_frame(
                    f.frame,
                    &script.camera,
                    Ok(&f.depth),
                    Some(&f.detections),
                    graph,
                    cfg,
                )
            })
            .collect()
    }

    #[test]
    fn missing_detections_fall_back_to_history() {
        let reg = standard_registry(200).unwrap();
        let graph = reg.get("CornerClamp").unwrap();
        let cfg = EstimatorConfig::default();
        let script = ScenarioScript::new("CornerClamp", &[(0, 2), (1, 3)]);
        let mut stages = stages_for(&script, graph, &cfg);
        let blank = process_frame(5, &script.camera, Err("gone".into()), None, graph, &cfg);
        assert!(blank.poses.is_empty());
        assert!(!blank.base_observed);
        assert_eq!(blank.failures.len(), 1);
        stages.push(blank);
        let est = fuse_stages(stages, graph, &cfg.fusion).unwrap();
        assert_eq!(est[5].state, 1);
        assert_eq!(est[5].dl, StateDistribution::uniform(3));
    }

    #[test]
    fn dl_only_weights_follow_class_scores() {
        let reg = standard_registry(200).unwrap();
        let graph = reg.get("NanoVise").unwrap();
        let mut script = ScenarioScript::new("NanoVise", &[(0, 3), (1, 3), (2, 3)]);
        script.noise.state_confusion = 0.6;
        script.noise.rng_seed = 4;
        let cfg = EstimatorConfig::default();
        let stages = stages_for(&script, graph, &cfg);
        let dl_argmax: Vec<StateId> = stages.iter().map(|s| s.dl.argmax()).collect();
        let w = FusionWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let est = fuse_stages(stages, graph, &w).unwrap();
        assert_eq!(est.iter().map(|e| e.state).collect::<Vec<_>>(), dl_argmax);
    }

    #[test]
    fn evaluate_rejects_misalignment() {
        let reg = standard_registry(200).unwrap();
        let graph = reg.get("CornerClamp").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(
            &ScenarioScript::new("CornerClamp", &[(0, 3)]),
            &reg,
            dir.path(),
        )
        .unwrap();
        let cfg = EstimatorConfig::default();
        let seq = load_sequence(&dir.path().join(MANIFEST_FILE)).unwrap();
        let mut est = run_sequence(&seq, &out.detections, graph, &cfg)
            .unwrap()
            .estimates;
        est[1].frame = 7;
        match evaluate(&est, &out.manifest, graph, None).unwrap_err() {
            PipelineError::Misaligned { frame, .. } => assert_eq!(frame, 1),
            other => panic!("{other}"),
        }
        est.truncate(1);
        match evaluate(&est, &out.manifest, graph, None).unwrap_err() {
            PipelineError::Misaligned { frame, .. } => assert_eq!(frame, 1),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn estimate_lines_round_trip() {
        let reg = standard_registry(200).unwrap();
        let graph = reg.get("CornerClamp").unwrap();
        let cfg = EstimatorConfig::default();
        let script = ScenarioScript::new("CornerClamp", &[(0, 2)]);
        let est = fuse_stages(stages_for(&script, graph, &cfg), graph, &cfg.fusion).unwrap();
        let text = crate::dataset::to_json_lines(&est);
        let back: Vec<FrameEstimate> = crate::dataset::from_json_lines(&text)
            .unwrap()
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        assert_eq!(back, est);
    }
}
