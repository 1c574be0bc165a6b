//! End-to-end runs of the `mtwgeo` binary.

use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn mtwgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtwgeo"))
        .args(args)
        .env_remove("MTWGEO_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn check<'a>(report: &'a Value, id: &str) -> &'a Value {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["id"] == id)
        .unwrap_or_else(|| panic!("no check {id} in {report}"))
}

#[test]
fn validate_accepts_a_good_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    fs::write(&p, r#"{"manifold": "sphere_r1", "command": "cut", "x": [1.0, 0.5], "theta": 0.3}"#).unwrap();
    let o = mtwgeo(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "valid");
}

#[test]
fn validate_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    fs::write(&p, r#"{"manifold": "torus_2pi", "command": "geodesic", "x": [0, 0], "v": [1, 0], "step": 0}"#).unwrap();
    let o = mtwgeo(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("step"), "{}", stdout(&o));
}

#[test]
fn geodesic_report_goes_to_stdout() {
    let o = mtwgeo(&["geodesic", "--manifold", "torus_2pi", "--x", "0,0", "--v", "1,-0.5", "--t", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(check(&r, "speed_conservation")["pass"], true);
    assert_eq!(r["summary"]["ok"], true);
}

#[test]
fn run_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    fs::write(&p, r#"{"manifold": "sphere_r1", "command": "cut", "x": [1.0, 0.5], "theta": 0.3}"#).unwrap();
    let out = dir.path().join("out");
    let o = mtwgeo(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).is_empty());
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["scenario"]["command"], "cut");
    assert_eq!(check(&r, "cut_point_minimizing")["pass"], true);
}

#[test]
fn domain_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("d.svg");
    let o = mtwgeo(&[
        "domain", "--manifold", "torus_2pi", "--x", "0,0", "--n", "64", "--svg", svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(svg).unwrap().contains("<svg"));
}

#[test]
fn invalid_input_exits_with_2() {
    let o = mtwgeo(&["geodesic", "--manifold", "klein_bottle", "--x", "0,0", "--v", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sphere_r1"));

    let o = mtwgeo(&["geodesic", "--manifold", "torus_2pi", "--x", "0,0", "--v", "1,0", "--step", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_mtwgeo"))
        .args(["focal", "--manifold", "sphere_r1", "--x", "1,0", "--v", "1,0"])
        .env("MTWGEO_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inline_declarations_are_accepted() {
    let o = mtwgeo(&[
        "focal",
        "--manifold",
        r#"{"type": "sphere", "params": {"radius": 2.0}}"#,
        "--x",
        "1,0",
        "--v",
        "0.5,0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let c = check(&r, "focal_time_closed_form");
    assert_eq!(c["pass"], true);
}
