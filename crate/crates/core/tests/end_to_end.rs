//! Simulator output written to disk, read back and pushed through the pipeline.

use std::path::Path;

use asmpose::dataset::{load_sequence, read_detections, ManifestEntry, ModelRegistry};
use asmpose::geometry::Vec3;
use asmpose::pipeline::{evaluate, run_sequence, EstimatorConfig, RunOutput};
use asmpose::simulator::{
    run_scenario, standard_registry, ScenarioScript, DETECTIONS_FILE, MANIFEST_FILE,
};

fn run_from_disk(
    registry: &ModelRegistry,
    script: &ScenarioScript,
    dir: &Path,
) -> (Vec<ManifestEntry>, RunOutput) {
    let sim = run_scenario(script, registry, dir).unwrap();
    let seq = load_sequence(&dir.join(MANIFEST_FILE)).unwrap();
    let det = read_detections(&dir.join(DETECTIONS_FILE)).unwrap();
    let graph = registry.get(&script.assembly).unwrap();
    let run = run_sequence(&seq, &det, graph, &EstimatorConfig::default()).unwrap();
    (sim.manifest, run)
}

#[test]
fn noisy_geared_caliper_stays_within_threshold() {
    let registry = standard_registry(500).unwrap();
    let graph = registry.get("GearedCaliper").unwrap();
    let mut script = ScenarioScript::new("GearedCaliper", &[(0, 5), (1, 5), (2, 5), (3, 5)]);
    script.noise.keypoint_sigma = 1.0;
    script.noise.depth_noise_sigma = 0.001;
    script.noise.rng_seed = 21;
    let dir = tempfile::tempdir().unwrap();
    let (manifest, run) = run_from_disk(&registry, &script, dir.path());

    let report = evaluate(&run.estimates, &manifest, graph, Some(&run.runtime_ms)).unwrap();
    assert_eq!(report.frame_count, 20);
    assert!(report.add_accuracy >= 95.0, "{}", report.to_table());
    assert!(
        report.mean_e_trans_mm.unwrap() < 10.0,
        "{}",
        report.to_table()
    );
    assert!(report.state.accuracy >= 90.0, "{}", report.to_table());
    assert!(report.mean_runtime_ms.unwrap() > 0.0);

    // Evaluation is a pure function of its inputs.
    let again = evaluate(&run.estimates, &manifest, graph, Some(&run.runtime_ms)).unwrap();
    assert_eq!(
        serde_json::to_string(&report).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn known_corruption_rate_sets_add_accuracy() {
    let registry = standard_registry(500).unwrap();
    let graph = registry.get("CornerClamp").unwrap();
    let script = ScenarioScript::new("CornerClamp", &[(2, 20)]);
    let dir = tempfile::tempdir().unwrap();
    let (manifest, mut run) = run_from_disk(&registry, &script, dir.path());
    for frame in [3, 11] {
        for part in run.estimates[frame].poses.values_mut() {
            let t = part.pose.translation() + Vec3::new(0.0, 0.0, 0.5);
            part.pose = part.pose.with_translation(t);
        }
    }
    let report = evaluate(&run.estimates, &manifest, graph, None).unwrap();
    assert_eq!(report.add_accuracy, 90.0);
    assert_eq!(report.state.macro_f1, 100.0);
}

#[test]
fn unreadable_depth_fails_the_frame_not_the_sequence() {
    let registry = standard_registry(500).unwrap();
    let graph = registry.get("CornerClamp").unwrap();
    let script = ScenarioScript::new("CornerClamp", &[(0, 3), (1, 3)]);
    let dir = tempfile::tempdir().unwrap();
    let sim = run_scenario(&script, &registry, dir.path()).unwrap();
    std::fs::write(dir.path().join(&sim.manifest[2].depth), b"not a png").unwrap();
    std::fs::remove_file(dir.path().join(&sim.manifest[4].depth)).unwrap();

    let seq = load_sequence(&dir.path().join(MANIFEST_FILE)).unwrap();
    let det = read_detections(&dir.path().join(DETECTIONS_FILE)).unwrap();
    let run = run_sequence(&seq, &det, graph, &EstimatorConfig::default()).unwrap();
    assert_eq!(run.estimates.len(), 6);
    for (i, est) in run.estimates.iter().enumerate() {
        assert_eq!(
            est.failures.is_empty(),
            i != 2 && i != 4,
            "frame {i}: {:?}",
            est.failures
        );
        assert_eq!(est.state, sim.manifest[i].gt_state, "frame {i}");
    }
}
