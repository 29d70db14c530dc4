//! End-to-end tests running the actual binary.

use interdyad_core::align::{write_alignment_dir, AlignManifest};
use interdyad_core::metrics::{save_segments, SegmentRecord};
use interdyad_core::scene::{generate_scene, save_scene, SceneConfig};
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interdyad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_flags_print_usage_and_exit_one() {
    let out = run(&["curate", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("Usage") || err.contains("usage"), "{err}");
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "curate",
        "--in",
        dir.path().join("nope.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn curate_counts_and_is_jobs_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    let passing = r#"{"clip_id":"ok","width":1280,"height":720,"fps":30.0,"duration_s":6.0,"jitter_score":4.0,"mean_optical_flow":2.0,"mean_clarity":0.97,"frame_count":180,"dual_body_frame_ratio":0.9,"dual_face_frame_ratio":0.5,"body_type":"upper-body","max_motion_velocity":0.3}"#;
    let low_res = r#"{"clip_id":"small","width":640,"height":480,"fps":30.0,"duration_s":6.0,"jitter_score":4.0,"mean_optical_flow":2.0,"mean_clarity":0.97,"frame_count":180,"dual_body_frame_ratio":0.9,"dual_face_frame_ratio":0.5,"body_type":"upper-body","max_motion_velocity":0.3}"#;
    let static_clip = passing
        .replace("\"ok\"", "\"still\"")
        .replace("0.3}", "0.05}");
    std::fs::write(
        &records,
        format!("{passing}\nnot-json\n{low_res}\n{static_clip}\n"),
    )
    .unwrap();

    let out1 = dir.path().join("out1");
    let res = run(&[
        "curate",
        "--in",
        records.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["input"], 3);
    assert_eq!(summary["malformed"], 1);
    assert_eq!(summary["pass_stage1"], 2);
    assert_eq!(summary["pass_stage2"], 2);
    assert_eq!(summary["pass_stage3"], 1);
    let decisions = std::fs::read_to_string(out1.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(decisions.lines().next().unwrap()).unwrap();
    assert_eq!(first["clip_id"], "ok");
    assert_eq!(first["verdict"], "accept");

    let out2 = dir.path().join("out2");
    let res = run(&[
        "curate",
        "--in",
        records.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--jobs",
        "4",
    ]);
    assert_eq!(res.status.code(), Some(0));
    for name in ["decisions.jsonl", "summary.json"] {
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap(),
            "{name} differs across --jobs settings"
        );
    }
}

#[test]
fn eval_identity_segments_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene::<f64>(3, &SceneConfig::default()).unwrap();
    let scene_path = dir.path().join("scene.json");
    save_scene(&scene_path, &scene).unwrap();
    let segments_path = dir.path().join("segments.json");
    save_segments(
        &segments_path,
        &[SegmentRecord {
            clip_id: "identity".into(),
            audio_segments: vec![[0.4, 1.2], [1.6, 1.9]],
            video_segments: vec![[0.4, 1.2], [1.6, 1.9]],
        }],
    )
    .unwrap();
    let report = dir.path().join("report.csv");
    let res = run(&[
        "eval",
        "--scene",
        scene_path.to_str().unwrap(),
        "--segments",
        segments_path.to_str().unwrap(),
        "--delta",
        "0",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let csv = std::fs::read_to_string(&report).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[0], "identity");
    assert_eq!(cols[1].parse::<f64>().unwrap(), 1.0);
    assert!(cols[2].parse::<f64>().unwrap() > 0.0);
    assert!(dir.path().join("report.aggregate.json").exists());
    assert!(dir.path().join("report.manifest.json").exists());
}

#[test]
fn gradcheck_passes_and_reports() {
    let out = run(&["gradcheck", "--trials", "5", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max relative error"), "{text}");
}

#[test]
fn train_align_writes_a_decreasing_loss_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let dataset = interdyad_core::align::synthetic_linear_task::<f64>(5, 3, 6, 6, 3);
    write_alignment_dir(
        &data_dir,
        &AlignManifest {
            n: 6,
            d: 6,
            d_m: 3,
            fps: 25,
        },
        &dataset,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let res = run(&[
        "train-align",
        "--data",
        data_dir.to_str().unwrap(),
        "--steps",
        "200",
        "--lr",
        "0.01",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let trace = std::fs::read_to_string(out_dir.join("loss.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("step,loss"));
    let losses: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 201);
    assert!(
        losses.last().unwrap() < &(losses[0] * 0.5),
        "no training progress: {losses:?}"
    );
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("params.json")).unwrap())
            .unwrap();
    assert_eq!(params["hidden"], 6);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn guide_dump_emits_fields_and_roles() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene::<f64>(4, &SceneConfig::default()).unwrap();
    let scene_path = dir.path().join("scene.json");
    save_scene(&scene_path, &scene).unwrap();
    let cfg_path = dir.path().join("guidance.json");
    std::fs::write(
        &cfg_path,
        r#"{"w_base":4.0,"sigma":null,"alpha_max":2.0,"smooth_window":5}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let res = run(&[
        "guide-dump",
        "--scene",
        scene_path.to_str().unwrap(),
        "--cfg",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let grid: interdyad_core::Latent32 =
        interdyad_core::latent::read_idlt(out_dir.join("guidance.idlt")).unwrap();
    let dims = grid.dims();
    assert_eq!((dims.c, dims.t, dims.h, dims.w), (1, scene.frames, 20, 40));
    for &v in grid.data() {
        assert!((4.0..=6.0).contains(&(v as f64)));
    }
    let roles = std::fs::read_to_string(out_dir.join("roles.csv")).unwrap();
    assert_eq!(roles.lines().count(), scene.frames + 1);
}

/// Manifest with the wall-clock dropped and the run's own output directory
/// replaced by a placeholder, so two runs into different directories compare
/// equal exactly when everything else matches.
fn normalized_manifest(path: &Path, out_root: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap()
        .replace(out_root.to_str().unwrap(), "<out>");
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_ms");
    v
}

#[test]
fn demo_reruns_are_byte_identical_modulo_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = run(&["demo", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.contains(&"manifest.json".to_string()));
    assert!(
        names.len() >= 10,
        "expected a full artifact set, got {names:?}"
    );
    for name in &names {
        if name == "manifest.json" {
            assert_eq!(
                normalized_manifest(&a.join(name), &a),
                normalized_manifest(&b.join(name), &b)
            );
        } else {
            assert_eq!(
                std::fs::read(a.join(name)).unwrap(),
                std::fs::read(b.join(name)).unwrap(),
                "artifact {name} differs between reruns"
            );
        }
    }
}

#[test]
fn demo_rejects_too_few_frames() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "demo",
        "--seed",
        "1",
        "--frames",
        "10",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
}
