//! End-to-end tests of the command-line surface: stage separability,
//! determinism, view budgeting, error reporting, and the report formats.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn segfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segfuse"))
        .args(args)
        .output()
        .expect("spawn segfuse")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn small_scene(dir: &Path, seed: u64) {
    let out = segfuse(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--preset",
        "floating",
        "--seed",
        &seed.to_string(),
        "--objects",
        "2",
        "--views",
        "8",
    ]);
    assert_success(&out);
}

#[test]
fn synth_same_seed_writes_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_scene(a.path(), 7);
    small_scene(b.path(), 7);
    let snap_a = dir_snapshot(a.path());
    let snap_b = dir_snapshot(b.path());
    assert_eq!(
        snap_a.keys().collect::<Vec<_>>(),
        snap_b.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &snap_a {
        assert_eq!(bytes, &snap_b[name], "{name} differs between runs");
    }
}

#[test]
fn staged_pipeline_matches_end_to_end_byte_for_byte() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 11);
    let work = tempfile::tempdir().unwrap();
    let scene_arg = scene.path().to_str().unwrap().to_string();

    let segs = work.path().join("segs.json");
    assert_success(&segfuse(&[
        "oversegment",
        "--scene",
        &scene_arg,
        "--out",
        segs.to_str().unwrap(),
    ]));
    let matrix = work.path().join("matrix.txt");
    assert_success(&segfuse(&[
        "affinity",
        "--scene",
        &scene_arg,
        "--segs",
        segs.to_str().unwrap(),
        "--out",
        matrix.to_str().unwrap(),
    ]));
    let staged_out = work.path().join("staged");
    assert_success(&segfuse(&[
        "grow",
        "--scene",
        &scene_arg,
        "--segs",
        segs.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
        "--out-dir",
        staged_out.to_str().unwrap(),
    ]));

    let direct_out = work.path().join("direct");
    assert_success(&segfuse(&[
        "run",
        "--scene",
        &scene_arg,
        "--out-dir",
        direct_out.to_str().unwrap(),
    ]));

    let staged = std::fs::read(staged_out.join("instances.txt")).unwrap();
    let direct = std::fs::read(direct_out.join("instances.txt")).unwrap();
    assert_eq!(staged, direct, "staged and end-to-end outputs diverge");
    let staged_json = std::fs::read(staged_out.join("instances.json")).unwrap();
    let direct_json = std::fs::read(direct_out.join("instances.json")).unwrap();
    assert_eq!(staged_json, direct_json);
}

#[test]
fn views_fraction_selects_single_view_from_hundred() {
    let scene = tempfile::tempdir().unwrap();
    // A 100-view scene; keep it small through a spec file.
    let spec = scene.path().join("spec.txt");
    std::fs::write(
        &spec,
        "seed = 3\nfloor_extent = 1.6\ndensity = 400\nviews = 100\n\
         camera_radius = 2.0\ncamera_height = 1.8\nlook_at = 0,0,0.3\n\
         image = 96x72\nfocal = 80\n\
         object = cuboid 0.3 0.3 0.3 pos 0.0 0.0 0.5 yaw 0.3 name crate_a\n",
    )
    .unwrap();
    let scene_dir = scene.path().join("scene");
    assert_success(&segfuse(&[
        "synth",
        "--out",
        scene_dir.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read_dir(scene_dir.join("poses")).unwrap().count(),
        100
    );
    let out_dir = scene.path().join("out");
    let out = segfuse(&[
        "run",
        "--scene",
        scene_dir.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--views-fraction",
        "0.01",
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("(1 views)"),
        "expected exactly one view used, got: {stdout}"
    );
}

#[test]
fn missing_depth_directory_is_a_named_input_error() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 13);
    std::fs::remove_dir_all(scene.path().join("depth")).unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = segfuse(&[
        "run",
        "--scene",
        scene.path().to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "input errors exit with 1");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("depth"),
        "error must name the missing path, got: {stderr}"
    );
}

#[test]
fn single_threshold_grow_matches_run_with_same_schedule() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 17);
    let work = tempfile::tempdir().unwrap();
    let scene_arg = scene.path().to_str().unwrap().to_string();

    let segs = work.path().join("segs.json");
    assert_success(&segfuse(&[
        "oversegment",
        "--scene",
        &scene_arg,
        "--out",
        segs.to_str().unwrap(),
    ]));
    let matrix = work.path().join("matrix.txt");
    assert_success(&segfuse(&[
        "affinity",
        "--scene",
        &scene_arg,
        "--segs",
        segs.to_str().unwrap(),
        "--out",
        matrix.to_str().unwrap(),
    ]));
    let grow_out = work.path().join("grow");
    assert_success(&segfuse(&[
        "grow",
        "--scene",
        &scene_arg,
        "--segs",
        segs.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
        "--out-dir",
        grow_out.to_str().unwrap(),
        "--thresholds",
        "0.9",
    ]));
    let run_out = work.path().join("run");
    assert_success(&segfuse(&[
        "run",
        "--scene",
        &scene_arg,
        "--out-dir",
        run_out.to_str().unwrap(),
        "--thresholds",
        "0.9",
    ]));
    assert_eq!(
        std::fs::read(grow_out.join("instances.txt")).unwrap(),
        std::fs::read(run_out.join("instances.txt")).unwrap()
    );
}

#[test]
fn eval_subcommand_scores_label_files() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 19);
    let out_dir = tempfile::tempdir().unwrap();
    assert_success(&segfuse(&[
        "run",
        "--scene",
        scene.path().to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
    ]));
    let report = out_dir.path().join("report.json");
    let out = segfuse(&[
        "eval",
        "--pred",
        out_dir.path().join("instances.txt").to_str().unwrap(),
        "--gt",
        scene.path().join("gt_instances.txt").to_str().unwrap(),
        "--json",
        report.to_str().unwrap(),
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("AP50"), "table header missing: {stdout}");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    // Oracle scene at defaults: perfect score.
    assert_eq!(parsed["ap"], serde_json::json!(1.0));
    assert_eq!(parsed["ap50"], serde_json::json!(1.0));
}

#[test]
fn query_returns_the_named_object_as_json() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 23);
    let out_dir = tempfile::tempdir().unwrap();
    assert_success(&segfuse(&[
        "run",
        "--scene",
        scene.path().to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
    ]));
    let ply = out_dir.path().join("hit.ply");
    let out = segfuse(&[
        "query",
        "--scene",
        scene.path().to_str().unwrap(),
        "--instances",
        out_dir.path().join("instances.txt").to_str().unwrap(),
        "--prompt",
        "object_0",
        "--ply",
        ply.to_str().unwrap(),
    ]);
    assert_success(&out);
    let parsed: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(parsed["query"], "object_0");
    let matches = parsed["matches"].as_array().unwrap();
    assert_eq!(matches.len(), 1, "expected one match: {parsed}");
    assert!(matches[0]["overlap"].as_f64().unwrap() > 0.5);
    assert!(ply.is_file());
}

#[test]
fn ablate_emits_five_rows() {
    let mut scene_args: Vec<String> = Vec::new();
    let mut dirs = Vec::new();
    for seed in [31u64, 37] {
        let dir = tempfile::tempdir().unwrap();
        let out = segfuse(&[
            "synth",
            "--out",
            dir.path().to_str().unwrap(),
            "--preset",
            "contact",
            "--seed",
            &seed.to_string(),
            "--objects",
            "3",
            "--views",
            "6",
            "--merge-prob",
            "0.3",
            "--split-prob",
            "0.2",
            "--erode-px",
            "2",
        ]);
        assert_success(&out);
        scene_args.push(dir.path().to_str().unwrap().to_string());
        dirs.push(dir);
    }
    let json = dirs[0].path().join("ablation.json");
    let mut args: Vec<&str> = vec!["ablate"];
    for s in &scene_args {
        args.push("--scene");
        args.push(s);
    }
    args.push("--json");
    let json_str = json.to_str().unwrap().to_string();
    args.push(&json_str);
    args.push("--thresholds");
    args.push("0.9,0.8,0.7,0.6,0.5");
    let out = segfuse(&args);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in [
        "point-level",
        "superpoints",
        "superpoints+multi-level",
        "superpoints+progressive",
        "full",
    ] {
        assert!(stdout.contains(name), "missing row {name}: {stdout}");
    }
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 5);
}

#[test]
fn run_reports_perfect_score_on_oracle_scene() {
    let scene = tempfile::tempdir().unwrap();
    small_scene(scene.path(), 29);
    let out_dir = tempfile::tempdir().unwrap();
    let out = segfuse(&[
        "run",
        "--scene",
        scene.path().to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--eval",
        "--threads",
        "2",
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1.000"), "expected a perfect AP row: {stdout}");
    assert!(out_dir.path().join("report.json").is_file());
}
