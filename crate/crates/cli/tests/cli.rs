use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asmpose::assembly::StateDistribution;
use asmpose::dataset::{
    from_json_lines, load_sequence, read_detections, to_json_lines, write_detections,
};
use asmpose::geometry::Vec3;
use asmpose::metrics::SequenceReport;
use asmpose::pipeline::{FrameEstimate, PartEstimate};

fn asmpose(args: &[&str]) -> Output {
    asmpose_env(args, None)
}

fn asmpose_env(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_asmpose"));
    cmd.args(args).env_remove("ASMPOSE_OUTPUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("ASMPOSE_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const CORNER_CLAMP: &str = r#"
assembly = "CornerClamp"

[[segments]]
state = 0
frames = 3

[[segments]]
state = 1
frames = 3

[[segments]]
state = 2
frames = 3
"#;

/// Simulates `script` into `root/sim` and returns the manifest and detections paths.
fn simulate(root: &Path, script: &Path) -> (PathBuf, PathBuf) {
    let sim = root.join("sim");
    ok(&asmpose(&["simulate", s(script), "--out", s(&sim)]));
    (sim.join("manifest.jsonl"), sim.join("detections.jsonl"))
}

fn read_estimates(path: &Path) -> Vec<FrameEstimate> {
    from_json_lines(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .into_iter()
        .map(|(_, e)| e)
        .collect()
}

fn read_report(dir: &Path) -> SequenceReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), "cc.toml", CORNER_CLAMP);
    let out = asmpose(&["simulate", s(&script), "--out", s(&dir.path().join("sim"))]);
    let stdout = ok(&out);
    assert!(stdout.contains("9 frames"), "{stdout}");
    assert!(stdout.contains("[0, 1, 2]"), "{stdout}");
    let seq = load_sequence(&dir.path().join("sim/manifest.jsonl")).unwrap();
    let states: Vec<_> = seq.entries().iter().map(|e| e.gt_state).collect();
    assert_eq!(states, [0, 0, 0, 1, 1, 1, 2, 2, 2]);
    assert!(dir.path().join("sim/depth/000008.png").is_file());
}

#[test]
fn unknown_assembly_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(
        dir.path(),
        "bad.toml",
        &CORNER_CLAMP.replace("CornerClamp", "Wingnut"),
    );
    let out = asmpose(&["simulate", s(&script), "--out", s(&dir.path().join("sim"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Wingnut"));
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(asmpose(&["simulate", s(&missing)]).status.code(), Some(3));

    let garbled = write_script(dir.path(), "garbled.toml", "assembly = [");
    assert_eq!(asmpose(&["simulate", s(&garbled)]).status.code(), Some(2));

    let typo = write_script(
        dir.path(),
        "typo.toml",
        &format!("{CORNER_CLAMP}\n[noise]\nkeypoint_sigmaa = 1.0\n"),
    );
    assert_eq!(asmpose(&["simulate", s(&typo)]).status.code(), Some(2));

    // A regular file where a directory is needed.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let out = asmpose(&["registry", "--out", s(&blocker.join("reg"))]);
    assert_eq!(out.status.code(), Some(3));

    let m = dir.path().join("manifest.jsonl");
    let out = asmpose(&["run", s(&m), s(&m), "--weights", "1,0,0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = asmpose(&["run", s(&m), s(&m)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from_env");
    let flag_dir = dir.path().join("from_flag");
    ok(&asmpose_env(&["registry"], Some(&env_dir)));
    assert!(env_dir.join("registry.toml").is_file());
    ok(&asmpose_env(
        &["registry", "--out", s(&flag_dir)],
        Some(&env_dir.join("unused")),
    ));
    assert!(flag_dir.join("registry.toml").is_file());
    assert!(!env_dir.join("unused").exists());

    // The environment beats the config file's output_dir.
    let script = write_script(dir.path(), "cc.toml", CORNER_CLAMP);
    let (manifest, detections) = simulate(dir.path(), &script);
    let config = write_script(dir.path(), "pipeline.toml", "output_dir = \"cfg_out\"\n");
    let run = |env: Option<&Path>| {
        ok(&asmpose_env(
            &["run", s(&manifest), s(&detections), "--config", s(&config)],
            env,
        ))
    };
    run(None);
    assert!(dir.path().join("cfg_out/estimates.jsonl").is_file());
    let run_env = dir.path().join("run_env");
    run(Some(&run_env));
    assert!(run_env.join("estimates.jsonl").is_file());
}

#[test]
fn empty_detection_frame_falls_back_to_history() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), "cc.toml", CORNER_CLAMP);
    let (manifest, detections) = simulate(dir.path(), &script);
    let mut det = read_detections(&detections).unwrap();
    det.frames[4].instances.clear();
    write_detections(&detections, &det).unwrap();

    let run_dir = dir.path().join("run");
    let stdout = ok(&asmpose(&[
        "run",
        s(&manifest),
        s(&detections),
        "--out",
        s(&run_dir),
        "--timing",
    ]));
    assert!(stdout.contains("9 frames"), "{stdout}");
    let est = read_estimates(&run_dir.join("estimates.jsonl"));
    assert_eq!(est.len(), 9);
    assert!(est[4].poses.is_empty());
    assert_eq!(est[4].dl, StateDistribution::uniform(3));
    assert_eq!(est[4].pose_based, StateDistribution::uniform(3));
    assert_eq!(est[4].state, est[3].state);
    assert_eq!(est[5].state, 1);
    let timing = std::fs::read_to_string(run_dir.join("timing.jsonl")).unwrap();
    assert_eq!(timing.lines().count(), 9);
}

fn perfect_estimates(manifest: &Path) -> Vec<FrameEstimate> {
    let seq = load_sequence(manifest).unwrap();
    seq.entries()
        .iter()
        .map(|e| {
            let n = 3;
            let hot = StateDistribution::one_hot(n, e.gt_state);
            FrameEstimate {
                frame: e.frame,
                assembly: e.assembly.clone(),
                poses: e
                    .gt_poses
                    .iter()
                    .map(|(part, pose)| {
                        let est = PartEstimate {
                            pose: *pose,
                            inliers: 17,
                            reprojection_px: 0.0,
                            refine_shift: 0.0,
                            refined: true,
                        };
                        (part.clone(), est)
                    })
                    .collect(),
                failures: Vec::new(),
                dl: hot.clone(),
                pose_based: hot.clone(),
                fused: hot,
                state: e.gt_state,
                degenerate: false,
            }
        })
        .collect()
}

#[test]
fn evaluate_counts_frames_against_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(
        dir.path(),
        "two.toml",
        "assembly = \"CornerClamp\"\n\n[[segments]]\nstate = 2\nframes = 2\n",
    );
    let (manifest, _) = simulate(dir.path(), &script);
    let estimates = dir.path().join("estimates.jsonl");
    let eval = |name: &str| {
        let out = dir.path().join(name);
        ok(&asmpose(&[
            "evaluate",
            s(&estimates),
            s(&manifest),
            "--out",
            s(&out),
        ]));
        read_report(&out)
    };

    let mut est = perfect_estimates(&manifest);
    std::fs::write(&estimates, to_json_lines(&est)).unwrap();
    let perfect = eval("perfect");
    assert_eq!(perfect.state.macro_f1, 100.0);
    assert_eq!(perfect.add_accuracy, 100.0);
    assert_eq!(perfect.mean_e_trans_mm, Some(0.0));
    assert_eq!(perfect.mean_e_rot_deg, Some(0.0));
    assert_eq!(perfect.mean_runtime_ms, None);

    for part in est[1].poses.values_mut() {
        part.pose = part
            .pose
            .with_translation(part.pose.translation() + Vec3::new(0.5, 0.0, 0.0));
    }
    std::fs::write(&estimates, to_json_lines(&est)).unwrap();
    let half = eval("half");
    assert_eq!(half.add_accuracy, 50.0);
    for summary in half.parts.values() {
        assert_eq!(summary.add_accuracy, 50.0);
    }
    assert_eq!(half.state.macro_f1, 100.0);
}

#[test]
fn evaluate_rejects_misaligned_frames() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), "cc.toml", CORNER_CLAMP);
    let (manifest, _) = simulate(dir.path(), &script);
    let mut est = perfect_estimates(&manifest);
    est.remove(5);
    let estimates = dir.path().join("estimates.jsonl");
    std::fs::write(&estimates, to_json_lines(&est)).unwrap();
    let out = asmpose(&[
        "evaluate",
        s(&estimates),
        s(&manifest),
        "--out",
        s(&dir.path().join("eval")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("frame 5"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn dl_only_weights_follow_class_scores_and_fusion_wins() {
    let dir = tempfile::tempdir().unwrap();
    let mut body =
        String::from("assembly = \"NanoVise\"\n\n[noise]\nstate_confusion = 0.3\nrng_seed = 4\n");
    for state in 0..8 {
        body.push_str(&format!("\n[[segments]]\nstate = {state}\nframes = 6\n"));
    }
    let script = write_script(dir.path(), "nv.toml", &body);
    let (manifest, detections) = simulate(dir.path(), &script);
    let run_eval = |name: &str, weights: Option<&str>| {
        let run_dir = dir.path().join(name);
        let mut args = vec!["run", s(&manifest), s(&detections), "--out", s(&run_dir)];
        if let Some(w) = weights {
            args.extend(["--weights", w]);
        }
        ok(&asmpose(&args));
        let est = run_dir.join("estimates.jsonl");
        let eval_dir = run_dir.join("eval");
        ok(&asmpose(&[
            "evaluate",
            s(&est),
            s(&manifest),
            "--out",
            s(&eval_dir),
        ]));
        (read_estimates(&est), read_report(&eval_dir))
    };

    let (dl_est, dl_report) = run_eval("dl_only", Some("1,0,0,0"));
    for e in &dl_est {
        assert_eq!(e.state, e.dl.argmax(), "frame {}", e.frame);
    }
    let (_, fused_report) = run_eval("fused", None);
    assert!(
        fused_report.state.macro_f1 > dl_report.state.macro_f1,
        "fused {} vs DL-only {}",
        fused_report.state.macro_f1,
        dl_report.state.macro_f1
    );
}
