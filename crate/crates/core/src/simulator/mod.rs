//! Synthetic sequences: scripted assembly timelines rendered to depth, ground
//! truth and noisy detections, written in the dataset formats.
//!
//! The camera frame is the world frame and looks straight down at a table
//! 0.8 m away. The base part sways slowly on the table; attached parts follow
//! it through their state's relative pose, and parts not yet mounted lie
//! parked in a row beside the assembly.

mod raster;
mod standard;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use raster::{apply_occluder, projected_bbox, render_depth};
pub use standard::{
    standard_registry, standard_registry_file, write_standard_registry, PART_HEIGHT,
};

use crate::assembly::{neighbor_states, AssemblyGraph, PartId, StateId};
use crate::dataset::{
    encode_depth_png, to_json_lines, write_detections, write_file, DatasetError, DetectionFile,
    DetectionFrame, DetectionInstance, ManifestEntry, ModelRegistry,
};
use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3};
use crate::refine::{BoundingBox, DepthImage};

pub const TABLE_DEPTH: f64 = 0.8;
/// Confidence reported for every synthetic detection.
pub const DETECTION_CONFIDENCE: f64 = 0.95;

const PARK_Y: f64 = 0.26;
const PARK_X0: f64 = -0.45;
const PARK_STEP: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown assembly {0}")]
    UnknownAssembly(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Planar patch in front of one part, covering the left `coverage` fraction
/// of its bounding box at `depth` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderConfig {
    pub part: PartId,
    pub coverage: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Pixels.
    pub keypoint_sigma: f64,
    pub keypoint_dropout: f64,
    pub outlier_rate: f64,
    /// Probability that an instance's class scores are a random point on the
    /// simplex instead of one-hot on the true state.
    pub state_confusion: f64,
    /// Meters.
    pub depth_noise_sigma: f64,
    pub occluder: Option<OccluderConfig>,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            keypoint_sigma: 0.0,
            keypoint_dropout: 0.0,
            outlier_rate: 0.0,
            state_confusion: 0.0,
            depth_noise_sigma: 0.0,
            occluder: None,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidNoise(m));
        for (name, p) in [
            ("keypoint_dropout", self.keypoint_dropout),
            ("outlier_rate", self.outlier_rate),
            ("state_confusion", self.state_confusion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, s) in [
            ("keypoint_sigma", self.keypoint_sigma),
            ("depth_noise_sigma", self.depth_noise_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} = {s} must be a finite value >= 0"));
            }
        }
        if let Some(o) = &self.occluder {
            if !(0.0..=1.0).contains(&o.coverage) {
                return bad(format!("occluder coverage {} outside [0, 1]", o.coverage));
            }
            if !(o.depth > 0.0 && o.depth < TABLE_DEPTH) {
                return bad(format!(
                    "occluder depth {} must lie between camera and table",
                    o.depth
                ));
            }
        }
        Ok(())
    }
}

/// Slow sway of the base part on the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Mean base position on the table, camera x/y in meters.
    pub center: [f64; 2],
    pub sway_m: f64,
    pub yaw_deg: f64,
    pub period_frames: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            center: [0.0, -0.10],
            sway_m: 0.02,
            yaw_deg: 8.0,
            period_frames: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub state: StateId,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub assembly: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Registry to simulate from; the built-in one when absent. Relative
    /// paths resolve against the script's directory.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default = "CameraIntrinsics::azure_kinect_720p")]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub segments: Vec<Segment>,
}

fn default_fps() -> f64 {
    30.0
}

impl ScenarioScript {
    /// Script with default camera, motion and noise.
    pub fn new(assembly: impl Into<String>, segments: &[(StateId, u64)]) -> Self {
        Self {
            assembly: assembly.into(),
            fps: default_fps(),
            registry: None,
            camera: CameraIntrinsics::azure_kinect_720p(),
            motion: MotionConfig::default(),
            noise: NoiseConfig::default(),
            segments: segments
                .iter()
                .map(|&(state, frames)| Segment { state, frames })
                .collect(),
        }
    }

    pub fn frame_count(&self) -> u64 {
        self.segments.iter().map(|s| s.frames).sum()
    }

    /// Ground-truth state of every frame.
    pub fn timeline(&self) -> Vec<StateId> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.state, s.frames as usize))
            .collect()
    }

    /// Checks the script against its assembly graph. Consecutive nominal
    /// segments must repeat a state or step to a neighbor; error states may
    /// appear anywhere.
    pub fn validate(&self, graph: &AssemblyGraph) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScript(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        self.camera
            .validate()
            .map_err(|e| SimError::InvalidScript(format!("camera: {e}")))?;
        if !(self.motion.period_frames > 0.0) || self.motion.sway_m < 0.0 {
            return bad("motion needs a positive period and non-negative sway".into());
        }
        self.noise.validate()?;
        if let Some(o) = &self.noise.occluder {
            if graph.part(&o.part).is_none() {
                return bad(format!("occluder targets unknown part {}", o.part));
            }
        }
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        let mut last_nominal: Option<StateId> = None;
        for (i, seg) in self.segments.iter().enumerate() {
            let Some(state) = graph.states().get(seg.state) else {
                return bad(format!(
                    "segment {i}: state {} not in {}",
                    seg.state,
                    graph.assembly_id()
                ));
            };
            if seg.frames == 0 {
                return bad(format!("segment {i} is empty"));
            }
            if state.is_error_state {
                continue;
            }
            if let Some(prev) = last_nominal {
                let nbrs = neighbor_states(prev, graph)
                    .map_err(|e| SimError::InvalidScript(e.to_string()))?;
                if prev != seg.state && !nbrs.contains(&seg.state) {
                    return bad(format!(
                        "segment {i}: state {prev} cannot be followed by {}",
                        seg.state
                    ));
                }
            }
            last_nominal = Some(seg.state);
        }
        Ok(())
    }
}

/// Camera-frame pose of the base part at `frame`.
pub fn base_pose(motion: &MotionConfig, frame: u64) -> RigidTransform {
    let phase = 2.0 * PI * frame as f64 / motion.period_frames;
    let x = motion.center[0] + motion.sway_m * phase.sin();
    let y = motion.center[1] + 0.5 * motion.sway_m * (2.0 * phase).sin();
    let yaw = motion.yaw_deg.to_radians() * (phase + 0.7).sin();
    table_pose(x, y, yaw)
}

/// Resting pose on the table: model z points up, toward the camera.
fn table_pose(x: f64, y: f64, yaw: f64) -> RigidTransform {
    let place = RigidTransform::from_axis_angle(&Vec3::z(), yaw, Vec3::new(x, y, TABLE_DEPTH));
    place.compose(&RigidTransform::from_axis_angle(
        &Vec3::x(),
        PI,
        Vec3::zeros(),
    ))
}

/// Camera-frame poses of every part while the assembly is in `state`.
pub fn scene_poses(
    graph: &AssemblyGraph,
    state: StateId,
    motion: &MotionConfig,
    frame: u64,
) -> BTreeMap<PartId, RigidTransform> {
    let base = base_pose(motion, frame);
    let members = &graph.states()[state].relative_poses;
    graph
        .parts()
        .iter()
        .filter(|p| &p.part_id != graph.base_part())
        .enumerate()
        .map(|(i, p)| {
            let pose = match members.get(&p.part_id) {
                Some(rel) => base.compose(rel),
                None => table_pose(PARK_X0 + PARK_STEP * i as f64, PARK_Y, 0.0),
            };
            (p.part_id.clone(), pose)
        })
        .chain([(graph.base_part().clone(), base)])
        .collect()
}

/// Everything the simulator knows about one frame.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub frame: u64,
    pub gt_state: StateId,
    /// Poses of the parts that project into the image.
    pub gt_poses: BTreeMap<PartId, RigidTransform>,
    pub depth: DepthImage,
    pub detections: DetectionFrame,
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Class scores: one-hot on `state`, or with probability `confusion` a
/// uniform draw from the probability simplex.
fn class_scores(rng: &mut impl Rng, n: usize, state: StateId, confusion: f64) -> Vec<f64> {
    if confusion > 0.0 && rng.random::<f64>() < confusion {
        // Normalized unit exponentials are uniform on the simplex.
        let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = e.iter().sum();
        e.iter().map(|v| v / total).collect()
    } else {
        let mut s = vec![0.0; n];
        s[state] = 1.0;
        s
    }
}

/// Detection records for all parts that project into the image.
pub fn synthesize_detections(
    poses: &BTreeMap<PartId, RigidTransform>,
    graph: &AssemblyGraph,
    state: StateId,
    cam: &CameraIntrinsics,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Vec<DetectionInstance> {
    let normal = Normal::new(0.0, noise.keypoint_sigma).expect("sigma validated");
    let mut instances = Vec::new();
    for (part_id, pose) in poses {
        let Some(part) = graph.part(part_id) else {
            continue;
        };
        let Some(bbox) = projected_bbox(&part.mesh, pose, cam) else {
            continue;
        };
        let keypoints = part
            .keypoints_3d
            .points
            .iter()
            .map(|p| {
                let exact = cam.project_point(&pose.transform_point(p));
                let (mut u, mut v) = exact.map_or((bbox.x, bbox.y), |uv| (uv.x, uv.y));
                if noise.keypoint_sigma > 0.0 {
                    u += normal.sample(rng);
                    v += normal.sample(rng);
                }
                if noise.outlier_rate > 0.0 && rng.random::<f64>() < noise.outlier_rate {
                    u = bbox.x + rng.random::<f64>() * bbox.w;
                    v = bbox.y + rng.random::<f64>() * bbox.h;
                }
                let dropped =
                    noise.keypoint_dropout > 0.0 && rng.random::<f64>() < noise.keypoint_dropout;
                [u, v, if dropped { 0.0 } else { 1.0 }]
            })
            .collect();
        let scores = class_scores(rng, graph.state_count(), state, noise.state_confusion);
        instances.push(DetectionInstance {
            part: part_id.clone(),
            class_id: crate::assembly::argmax(&scores),
            confidence: DETECTION_CONFIDENCE,
            bbox,
            keypoints,
            scores,
            extra: BTreeMap::new(),
        });
    }
    instances
}

/// Renders one frame of a validated script. Each frame draws from its own
/// random streams, so frames can be produced in any order.
pub fn simulate_frame(
    script: &ScenarioScript,
    graph: &AssemblyGraph,
    frame: u64,
    state: StateId,
) -> SimFrame {
    let cam = &script.camera;
    let noise = &script.noise;
    let poses = scene_poses(graph, state, &script.motion, frame);

    let scene: Vec<_> = poses
        .iter()
        .filter_map(|(id, pose)| graph.part(id).map(|p| (&p.mesh, *pose)))
        .collect();
    let mut depth = render_depth(&scene, cam);
    if let Some(occ) = &noise.occluder {
        let target = graph.part(&occ.part).zip(poses.get(&occ.part));
        if let Some(bbox) = target.and_then(|(p, pose)| projected_bbox(&p.mesh, pose, cam)) {
            apply_occluder(&mut depth, &bbox, occ.coverage, occ.depth);
        }
    }
    if noise.depth_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.depth_noise_sigma).expect("sigma validated");
        let mut rng = frame_rng(noise.rng_seed, 2 * frame + 1);
        let data: Vec<f64> = depth
            .data()
            .iter()
            .map(|&d| {
                if d > 0.0 {
                    (d + normal.sample(&mut rng)).max(1e-3)
                } else {
                    0.0
                }
            })
            .collect();
        depth = DepthImage::new(depth.width(), depth.height(), data).expect("same dimensions");
    }

    let mut rng = frame_rng(noise.rng_seed, 2 * frame);
    let instances = synthesize_detections(&poses, graph, state, cam, noise, &mut rng);
    let gt_poses = poses
        .into_iter()
        .filter(|(id, pose)| {
            graph
                .part(id)
                .is_some_and(|p| projected_bbox(&p.mesh, pose, cam).is_some())
        })
        .collect();
    SimFrame {
        frame,
        gt_state: state,
        gt_poses,
        depth,
        detections: DetectionFrame {
            frame,
            assembly: graph.assembly_id().to_string(),
            instances,
            extra: BTreeMap::new(),
        },
    }
}

/// Renders every frame of a script in memory.
pub fn simulate(script: &ScenarioScript, graph: &AssemblyGraph) -> Result<Vec<SimFrame>, SimError> {
    script.validate(graph)?;
    let timeline = script.timeline();
    Ok(timeline
        .par_iter()
        .enumerate()
        .map(|(f, &state)| simulate_frame(script, graph, f as u64, state))
        .collect())
}

/// What a materialized scenario contains.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub manifest: Vec<ManifestEntry>,
    pub detections: DetectionFile,
}

impl ScenarioOutput {
    pub fn state_sequence(&self) -> Vec<StateId> {
        self.manifest.iter().map(|e| e.gt_state).collect()
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

/// Simulates a script and writes `manifest.jsonl`, `detections.jsonl` and
/// `depth/NNNNNN.png` under `out_dir`.
pub fn run_scenario(
    script: &ScenarioScript,
    registry: &ModelRegistry,
    out_dir: &Path,
) -> Result<ScenarioOutput, SimError> {
    let graph = registry
        .get(&script.assembly)
        .ok_or_else(|| SimError::UnknownAssembly(script.assembly.clone()))?;
    script.validate(graph)?;
    let timeline = script.timeline();
    let results: Vec<Result<(ManifestEntry, DetectionFrame), SimError>> = timeline
        .par_iter()
        .enumerate()
        .map(|(f, &state)| {
            let sim = simulate_frame(script, graph, f as u64, state);
            let depth = format!("depth/{f:06}.png");
            write_file(&out_dir.join(&depth), &encode_depth_png(&sim.depth)?)?;
            let entry = ManifestEntry {
                frame: sim.frame,
                timestamp: sim.frame as f64 / script.fps,
                assembly: graph.assembly_id().to_string(),
                depth,
                intrinsics: script.camera,
                gt_state: state,
                gt_poses: sim.gt_poses,
            };
            Ok((entry, sim.detections))
        })
        .collect();
    let (manifest, frames): (Vec<_>, Vec<_>) = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    write_file(
        &out_dir.join(MANIFEST_FILE),
        to_json_lines(&manifest).as_bytes(),
    )?;
    let detections = DetectionFile { frames };
    write_detections(&out_dir.join(DETECTIONS_FILE), &detections)?;
    Ok(ScenarioOutput {
        manifest,
        detections,
    })
}

/// Bounding box of a part at a pose, for callers that build their own scenes.
pub fn part_bbox(
    graph: &AssemblyGraph,
    part: &str,
    pose: &RigidTransform,
    cam: &CameraIntrinsics,
) -> Option<BoundingBox> {
    projected_bbox(&graph.part(part)?.mesh, pose, cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_sequence, read_detections};

    fn registry() -> ModelRegistry {
        standard_registry(500).unwrap()
    }

    #[test]
    fn script_echo() {
        let reg = registry();
        let script = ScenarioScript::new("CornerClamp", &[(0, 20), (1, 20), (2, 20)]);
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(&script, &reg, dir.path()).unwrap();
        let expect: Vec<StateId> = [0; 20].into_iter().chain([1; 20]).chain([2; 20]).collect();
        assert_eq!(out.state_sequence(), expect);
        let seq = load_sequence(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(seq.len(), 60);
        assert_eq!(seq.entries(), &out.manifest[..]);
        seq.validate_against(&reg).unwrap();
        assert_eq!(
            read_detections(&dir.path().join(DETECTIONS_FILE)).unwrap(),
            out.detections
        );
        let first = seq.load_frame(&seq.entries()[59]).unwrap();
        assert!(first.depth.data().iter().any(|&d| d > 0.0));
    }

    #[test]
    fn error_segment_is_propagated() {
        let reg = registry();
        let graph = reg.get("ScrewClamp").unwrap();
        let script = ScenarioScript::new("ScrewClamp", &[(0, 2), (1, 2), (9, 3), (2, 2)]);
        let frames = simulate(&script, graph).unwrap();
        let states: Vec<StateId> = frames.iter().map(|f| f.gt_state).collect();
        assert_eq!(states, vec![0, 0, 1, 1, 9, 9, 9, 2, 2]);
        assert!(graph.states()[9].is_error_state);
    }

    #[test]
    fn nano_vise_walks_all_states() {
        let reg = registry();
        let segments: Vec<(StateId, u64)> = (0..8).map(|s| (s, 2)).collect();
        let frames = simulate(
            &ScenarioScript::new("NanoVise", &segments),
            reg.get("NanoVise").unwrap(),
        )
        .unwrap();
        let mut seen: Vec<StateId> = frames.iter().map(|f| f.gt_state).collect();
        seen.dedup();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn unreachable_transition_is_rejected() {
        let reg = registry();
        let graph = reg.get("NanoVise").unwrap();
        let err = ScenarioScript::new("NanoVise", &[(0, 2), (3, 2)])
            .validate(graph)
            .unwrap_err();
        assert!(matches!(err, SimError::InvalidScript(_)), "{err}");
        let err = run_scenario(
            &ScenarioScript::new("Nope", &[(0, 1)]),
            &reg,
            Path::new("/nonexistent"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Nope"));
    }

    #[test]
    fn zero_noise_detections_are_exact() {
        let reg = registry();
        let graph = reg.get("CornerClamp").unwrap();
        let script = ScenarioScript::new("CornerClamp", &[(2, 1)]);
        let sim = simulate_frame(&script, graph, 0, 2);
        assert_eq!(sim.detections.instances.len(), 3);
        for inst in &sim.detections.instances {
            let part = graph.part(&inst.part).unwrap();
            let pose = sim.gt_poses[&inst.part];
            for (kp, p) in inst.keypoints.iter().zip(&part.keypoints_3d.points) {
                let uv = script
                    .camera
                    .project_point(&pose.transform_point(p))
                    .unwrap();
                assert_eq!([kp[0], kp[1], kp[2]], [uv.x, uv.y, 1.0]);
            }
            assert_eq!(inst.scores, vec![0.0, 0.0, 1.0]);
            assert_eq!(inst.class_id, 2);
        }
    }

    #[test]
    fn full_confusion_draws_from_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let mut mean = vec![0.0; n];
        let draws = 20_000;
        for _ in 0..draws {
            let s = class_scores(&mut rng, n, 1, 1.0);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.iter().all(|v| *v > 0.0));
            for (m, v) in mean.iter_mut().zip(&s) {
                *m += v / draws as f64;
            }
        }
        assert!(mean.iter().all(|m| (m - 0.25).abs() < 0.01), "{mean:?}");
    }

    /// Rendered depth sampled at projected visible surface points agrees
    /// with the points' own depth.
    #[test]
    fn depth_is_self_consistent() {
        let reg = registry();
        let graph = reg.get("ScrewClamp").unwrap();
        let script = ScenarioScript::new("ScrewClamp", &[(5, 1)]);
        let sim = simulate_frame(&script, graph, 0, 5);
        let cam = &script.camera;
        let (mut close, mut total) = (0usize, 0usize);
        for (id, pose) in &sim.gt_poses {
            let part = graph.part(id).unwrap();
            for p in &part.surface_points.points {
                let q = pose.transform_point(p);
                // Keep the points on camera-facing top faces.
                if (q.z - (TABLE_DEPTH - PART_HEIGHT)).abs() > 1e-9 {
                    continue;
                }
                let uv = cam.project_point(&q).unwrap();
                let Some(d) = sim.depth.sample_nearest(uv.x, uv.y) else {
                    continue;
                };
                total += 1;
                close += usize::from((d - q.z).abs() < 0.002);
            }
        }
        assert!(total > 100);
        assert!(close as f64 >= 0.95 * total as f64, "{close}/{total}");
    }

    #[test]
    fn parts_never_overlap_in_the_image() {
        let reg = registry();
        let cam = CameraIntrinsics::azure_kinect_720p();
        let motion = MotionConfig::default();
        for g in reg.assemblies() {
            for s in g.states() {
                for frame in (0..90).step_by(5) {
                    let boxes: Vec<BoundingBox> = scene_poses(g, s.state_id, &motion, frame)
                        .iter()
                        .map(|(id, pose)| part_bbox(g, id, pose, &cam).expect("in view"))
                        .collect();
                    for (i, a) in boxes.iter().enumerate() {
                        assert!(a.x > 0.0 && a.y > 0.0 && a.x + a.w < 1280.0 && a.y + a.h < 720.0);
                        // Mounted parts touch their neighbours, parked ones must not.
                        let parked =
                            |b: &BoundingBox| b.y + b.h / 2.0 > 360.0 + 0.2 * 600.0 / TABLE_DEPTH;
                        for b in &boxes[i + 1..] {
                            if parked(a) || parked(b) {
                                let apart = a.x + a.w < b.x
                                    || b.x + b.w < a.x
                                    || a.y + a.h < b.y
                                    || b.y + b.h < a.y;
                                assert!(apart, "{} state {}", g.assembly_id(), s.name);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn occluder_pixels_are_nearer() {
        let reg = registry();
        let graph = reg.get("CornerClamp").unwrap();
        let mut script = ScenarioScript::new("CornerClamp", &[(0, 1)]);
        let clean = simulate_frame(&script, graph, 0, 0);
        script.noise.occluder = Some(OccluderConfig {
            part: "base".into(),
            coverage: 0.5,
            depth: 0.4,
        });
        let occluded = simulate_frame(&script, graph, 0, 0);
        let bbox = part_bbox(graph, "base", &clean.gt_poses["base"], &script.camera).unwrap();
        let mut covered = 0;
        for y in 0..script.camera.height {
            for x in 0..script.camera.width {
                let (a, b) = (
                    clean.depth.get(x, y).unwrap(),
                    occluded.depth.get(x, y).unwrap(),
                );
                if a != b {
                    assert_eq!(b, 0.4);
                    assert!(a == 0.0 || b < a);
                    assert!(bbox.contains(x as f64, y as f64));
                    covered += 1;
                }
            }
        }
        assert!(covered as f64 > 0.3 * bbox.area());
    }

    #[test]
    fn reruns_are_identical() {
        let reg = registry();
        let mut script = ScenarioScript::new("NanoVise", &[(0, 3), (1, 3)]);
        script.noise = NoiseConfig {
            keypoint_sigma: 2.0,
            keypoint_dropout: 0.1,
            outlier_rate: 0.1,
            state_confusion: 0.3,
            depth_noise_sigma: 0.002,
            occluder: None,
            rng_seed: 11,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_scenario(&script, &reg, a.path()).unwrap();
        run_scenario(&script, &reg, b.path()).unwrap();
        for name in [MANIFEST_FILE, DETECTIONS_FILE, "depth/000004.png"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert!(x == y, "{name} differs");
        }
        script.noise.rng_seed = 12;
        let c = tempfile::tempdir().unwrap();
        run_scenario(&script, &reg, c.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join(DETECTIONS_FILE)).unwrap(),
            std::fs::read(c.path().join(DETECTIONS_FILE)).unwrap()
        );
    }

    #[test]
    fn script_toml_round_trip() {
        let text = r#"
assembly = "CornerClamp"
fps = 15.0

[noise]
keypoint_sigma = 2.0
rng_seed = 5
occluder = { part = "base", coverage = 0.5, depth = 0.4 }

[[segments]]
state = 0
frames = 20

[[segments]]
state = 1
frames = 20
"#;
        let s: ScenarioScript = toml::from_str(text).unwrap();
        assert_eq!(s.frame_count(), 40);
        assert_eq!(s.noise.rng_seed, 5);
        assert_eq!(s.motion, MotionConfig::default());
        let back: ScenarioScript = toml::from_str(&toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(
            toml::from_str::<ScenarioScript>("assembly = \"x\"\nsegments = []\nbogus = 1").is_err()
        );
    }
}
