use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn crossflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossflow"))
        .args(args)
        .env("CROSSFLOW_SCENARIO_DIR", scenarios())
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_reference_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = crossflow(&["run", "--horizon", "200", "--output-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "events.csv", "schedule.csv", "cascades.csv", "report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("# crossflow trajectory schema 1\n"));
}

#[test]
fn seed_override_reaches_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out =
        crossflow(&["run", "reference", "--seed", "42", "--horizon", "60", "--output-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&dir)["summary"]["seed"], 42);
    assert_eq!(report(&dir)["summary"]["horizon"], 60.0);
}

#[test]
fn missing_key_exits_with_schema_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("reference.toml")).unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, text.replace("safe_distance = 10.0\n", "")).unwrap();
    let out = crossflow(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("safe_distance"));
}

#[test]
fn unknown_key_exits_with_schema_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("reference.toml")).unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, text.replace("[run]\n", "[run]\ncolour = \"red\"\n")).unwrap();
    let out = crossflow(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn invalid_value_exits_with_schema_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("reference.toml")).unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, text.replace("u_min = -3.0", "u_min = 3.0")).unwrap();
    assert_eq!(code(&crossflow(&["run", path.to_str().unwrap()])), 2);
}

#[test]
fn compare_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = crossflow(&["compare", "--horizon", "300", "--output-dir", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["comparison.json", "comparison.txt", "coordinated/trajectory.csv", "baseline/events.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_traffic_compare_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("reference.toml")).unwrap();
    let path = tmp.path().join("zero.toml");
    fs::write(&path, text.replace("arrival_rate = 450.0", "arrival_rate = 0.0")).unwrap();
    let dir = tmp.path().join("out");
    let out = crossflow(&["compare", path.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(json["vehicles"], 0);
    assert_eq!(json["paired"].as_array().unwrap().len(), 0);
}

#[test]
fn plotdata_series() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&crossflow(&["run", "--horizon", "400", "--output-dir", dir.to_str().unwrap()])), 0);
    let speed = tmp.path().join("speed.csv");
    let out = crossflow(&["plotdata", dir.to_str().unwrap(), "--figure", "speed", "--output", speed.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&speed).unwrap();
    let mut labels: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    labels.dedup();
    assert_eq!(labels.len(), 22);

    let empty = tmp.path().join("empty.csv");
    let out = crossflow(&[
        "plotdata",
        dir.to_str().unwrap(),
        "--figure",
        "position",
        "--vehicles",
        "0",
        "--output",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&empty).unwrap().lines().count(), 1);
}

#[test]
fn unknown_figure_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = crossflow(&["plotdata", tmp.path().to_str().unwrap(), "--figure", "heatmap"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("heatmap"));
}

#[test]
fn scenario_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("reference.toml")).unwrap();
    fs::write(tmp.path().join("reference.toml"), text.replace("seed = 1\n", "seed = 77\n")).unwrap();
    let dir = tmp.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_crossflow"))
        .args(["run", "--horizon", "30", "--output-dir", dir.to_str().unwrap()])
        .env("CROSSFLOW_SCENARIO_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(report(&dir)["scenario"]["run"]["seed"], 77);
}
