use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fruitcount::report::{read_csv, CountRow};

const SCENE: &str = r#"
[scene]
seed = 11
fruit_count_front = 20
fruit_count_back = 5
frame_count = 50
width = 320
height = 240
focal = 250.0
segments = 2
"#;

fn fruitcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fruitcount")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_then_count_with_lucas_kanade() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SCENE).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");

    let sim = fruitcount(&["simulate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    for f in ["manifest.json", "poses.txt", "features.txt", "ground_truth.json", "frames/frame_0000.png", "masks/mask_0049.png"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let run = fruitcount(&["count", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--seed", "5"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["counts.csv", "fruits3d.csv", "sizes_histogram.csv", "tracks.jsonl", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let counts: Vec<CountRow> = read_csv(&out.join("counts.csv")).unwrap();
    assert_eq!(counts.len(), 2);
    let truth: usize = counts.iter().map(|r| r.truth.unwrap()).sum();
    let corrected: usize = counts.iter().map(|r| r.corrected).sum();
    let raw: usize = counts.iter().map(|r| r.raw).sum();
    assert!(corrected <= raw);
    assert!(corrected.abs_diff(truth) <= 4, "corrected {corrected} truth {truth}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["correction_enabled"], true);
}

#[test]
fn no_correction_and_repeat_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("{SCENE}\n[pipeline]\nflow_provider = \"ground_truth\"\n")).unwrap();
    let data = dir.path().join("data");
    assert!(fruitcount(&["simulate", "--config", s(&cfg), "--out", s(&data), "--seed", "3"]).status.success());

    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let run = fruitcount(&["count", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--no-correction"]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let counts: Vec<CountRow> = read_csv(&out.join("counts.csv")).unwrap();
        assert!(counts.iter().all(|r| r.corrected == r.raw));
        reports.push(
            ["counts.csv", "fruits3d.csv", "tracks.jsonl", "summary.json"].map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SCENE).unwrap();

    let missing = fruitcount(&["count", "--config", s(&cfg), "--dataset", s(&dir.path().join("nope")), "--out", s(dir.path())]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ingest:"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[tracker]\ngate = -1.0\n").unwrap();
    let run = fruitcount(&["count", "--config", s(&bad), "--dataset", s(dir.path()), "--out", s(dir.path())]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("config:"));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[scene]\nfruit_count = 3\n").unwrap();
    let run = fruitcount(&["simulate", "--config", s(&unknown), "--out", s(dir.path())]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("config:"));

    let no_cfg = fruitcount(&["simulate", "--config", s(&dir.path().join("absent.toml")), "--out", s(dir.path())]);
    assert!(!no_cfg.status.success());

    let invalid_scene = dir.path().join("scene.toml");
    fs::write(&invalid_scene, "[scene]\nframe_count = 0\n").unwrap();
    let run = fruitcount(&["simulate", "--config", s(&invalid_scene), "--out", s(dir.path())]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("simulate:"));
}

#[test]
fn correction_without_poses_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SCENE).unwrap();
    let data = dir.path().join("data");
    assert!(fruitcount(&["simulate", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let manifest = data.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("poses");
    fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();

    let run = fruitcount(&["count", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&dir.path().join("o"))]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("localize:"));
    let ok = fruitcount(&["count", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&dir.path().join("o")), "--no-correction"]);
    assert!(ok.status.success());
}
