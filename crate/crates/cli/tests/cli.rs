use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn viewrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewrel"))
        .args(args)
        .arg("-q")
        .env_remove("VIEWREL_WORKERS")
        .output()
        .expect("spawn viewrel")
}

fn ok(args: &[&str]) -> String {
    let out = viewrel(args);
    assert!(
        out.status.success(),
        "viewrel {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, ds) = (dir.path().join("scenes"), dir.path().join("ds"));
    ok(&[
        "synth",
        "--seed",
        "2",
        "--scenes",
        "2",
        "--instances",
        "8",
        "--poses",
        "10",
        "--out",
        s(&scenes),
    ]);
    assert!(dir.path().join("scenes.run.json").is_file());
    ok(&[
        "generate",
        "--scenes",
        s(&scenes),
        "--out",
        s(&ds),
        "--viewpoints",
        "5",
    ]);
    assert!(ds.join("manifest.json").is_file());
    ok(&["validate", "--dataset", s(&ds), "--scenes", s(&scenes)]);

    let prompts = ok(&["prompts", "--dataset", s(&ds), "--limit", "3"]);
    assert_eq!(prompts.lines().count(), 3);
    assert!(prompts.contains("relative to the camera pose"));

    let oracle = dir.path().join("oracle.jsonl");
    ok(&[
        "baseline",
        "--dataset",
        s(&ds),
        "--scenes",
        s(&scenes),
        "--solver",
        "oracle",
        "--out",
        s(&oracle),
    ]);
    let report_path = dir.path().join("report.json");
    let table = ok(&[
        "eval",
        "--dataset",
        s(&ds),
        "--scenes",
        s(&scenes),
        "--predictions",
        s(&oracle),
        "--report",
        s(&report_path),
    ]);
    assert!(table.contains("Overall"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["miou"], 1.0);
    assert_eq!(report["missing"], 0);
}

#[test]
fn missing_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, ds) = (dir.path().join("scenes"), dir.path().join("ds"));
    ok(&[
        "synth",
        "--seed",
        "6",
        "--scenes",
        "1",
        "--instances",
        "8",
        "--poses",
        "6",
        "--out",
        s(&scenes),
    ]);
    ok(&[
        "generate",
        "--scenes",
        s(&scenes),
        "--out",
        s(&ds),
        "--viewpoints",
        "3",
    ]);
    let preds = dir.path().join("oracle.jsonl");
    ok(&[
        "baseline",
        "--dataset",
        s(&ds),
        "--scenes",
        s(&scenes),
        "--solver",
        "oracle",
        "--out",
        s(&preds),
    ]);
    let text = fs::read_to_string(&preds).unwrap();
    let total = text.lines().count();
    let half: String = text
        .lines()
        .take(total / 2)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&preds, half).unwrap();
    ok(&[
        "eval",
        "--dataset",
        s(&ds),
        "--scenes",
        s(&scenes),
        "--predictions",
        s(&preds),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("oracle.jsonl.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["missing"], (total - total / 2) as u64);
    let miou = report["miou"].as_f64().unwrap();
    assert!((miou - (total / 2) as f64 / total as f64).abs() < 1e-12);
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let args = [
        "synth",
        "--scenes",
        "1",
        "--instances",
        "6",
        "--poses",
        "4",
        "--out",
        s(&scenes),
    ];
    ok(&args);
    let again = viewrel(&args);
    assert_eq!(again.status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(viewrel(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(viewrel(&["generate"]).status.code(), Some(2));
    assert_eq!(
        viewrel(&["baseline", "--solver", "psychic"]).status.code(),
        Some(2)
    );
}

#[test]
fn tampered_dataset_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, ds) = (dir.path().join("scenes"), dir.path().join("ds"));
    ok(&[
        "synth",
        "--seed",
        "9",
        "--scenes",
        "1",
        "--instances",
        "8",
        "--poses",
        "6",
        "--out",
        s(&scenes),
    ]);
    ok(&[
        "generate",
        "--scenes",
        s(&scenes),
        "--out",
        s(&ds),
        "--viewpoints",
        "3",
    ]);
    let path = ds.join("samples.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap().len() + 1;
    fs::write(&path, &text[first..]).unwrap();
    let out = viewrel(&["stats", "--dataset", s(&ds)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, ds) = (dir.path().join("scenes"), dir.path().join("ds"));
    let cfg = dir.path().join("gen.toml");
    fs::write(
        &cfg,
        "viewpoints_per_scene = 3\nseed = 4\n\n[relation]\ntau = 0.4\n",
    )
    .unwrap();
    ok(&[
        "synth",
        "--scenes",
        "1",
        "--instances",
        "6",
        "--poses",
        "8",
        "--out",
        s(&scenes),
    ]);
    ok(&[
        "generate",
        "--config",
        s(&cfg),
        "--scenes",
        s(&scenes),
        "--out",
        s(&ds),
        "--viewpoints",
        "5",
    ]);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["viewpoints_per_scene"], 5);
    assert_eq!(m["config"]["seed"], 4);
    assert_eq!(m["config"]["relation"]["tau"], 0.4);
    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ds.run.json")).unwrap()).unwrap();
    assert_eq!(run["config"], m["config"]);
}
