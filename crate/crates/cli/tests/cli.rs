use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, sub: &str, config: &str) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fddlm"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.join("out"))
        .arg("--threads")
        .arg("1")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_element_exits_with_2_and_lists_tags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "solve", r#"{"element": "q2q2p1"}"#);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("elm1, elm2, q1q1p0"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [r#"{"example": 7}"#, r#"{"case": 0}"#, r#"{"ratio": -1.0}"#, r#"{"base_cells": 0}"#, r#"{"colour": 1}"#, "{"] {
        assert_eq!(run(dir.path(), "solve", cfg).status.code(), Some(2), "{cfg}");
    }
}

#[test]
fn solve_writes_fields_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "solve", r#"{"example": 3, "case": 2, "base_cells": 8, "level": 1}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let s = read_json(&o.join("solve.json"));
    assert!(s["constraint_residual"].as_f64().unwrap() < 1e-10);
    assert!(s["relative_residual"].as_f64().unwrap() <= 1e-10);
    assert!(s["errors"]["l2_u2"].as_f64().unwrap() > 0.0);
    // defaults are resolved into the recorded config
    assert_eq!(s["config"]["element"], "elm1");
    assert_eq!(s["config"]["ratio"], 1.0);
    assert_eq!(s["resolution"]["background_cells_per_side"], 8);
    assert!(s["resolution"]["immersed_base_cells"].as_u64().unwrap() >= 1);
    for name in ["solution_background.vtk", "solution_immersed.vtk", "fragments.vtk"] {
        let vtk = fs::read_to_string(o.join(name)).unwrap();
        let title = vtk.lines().nth(1).unwrap();
        assert!(title.starts_with("fddlm solve {"), "{title}");
        assert!(title.contains(r#""case":2"#));
    }
    let immersed = fs::read_to_string(o.join("solution_immersed.vtk")).unwrap();
    assert!(immersed.contains("SCALARS u2 double 1"));
    assert!(immersed.contains("SCALARS lambda double 1"));
}

#[test]
fn solve_without_exact_solution_has_no_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "solve", r#"{"example": 1, "base_cells": 8, "level": 0}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&dir.path().join("out/solve.json"));
    assert!(s["errors"].is_null());
}

#[test]
fn convergence_is_deterministic() {
    let cfg = r#"{"example": 3, "case": 1, "element": "elm1", "levels": 3, "base_cells": 6}"#;
    // the output directory is part of the embedded config, so rerun in place
    let a = tempfile::tempdir().unwrap();
    let csv = a.path().join("out/convergence.csv");
    assert!(run(a.path(), "convergence", cfg).status.success());
    let first = fs::read_to_string(&csv).unwrap();
    assert!(run(a.path(), "convergence", cfg).status.success());
    assert!(first == fs::read_to_string(&csv).unwrap(), "outputs differ between runs");
    let text = first;
    assert!(text.starts_with("# fddlm convergence {"));
    assert_eq!(text.lines().filter(|l| l.starts_with("rates,")).count(), 1);
    assert!(text.lines().nth(1).unwrap().starts_with("# resolution {"));
    // two header comments, column names, three levels, rates
    assert_eq!(text.lines().count(), 7);
    let j = read_json(&a.path().join("out/convergence.json"));
    assert_eq!(j["table"]["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn convergence_needs_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "convergence", r#"{"levels": 2, "base_cells": 4}"#);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infsup_writes_table_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "infsup", r#"{"element": "elm2", "levels": 3, "base_cells": 4}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/infsup.csv")).unwrap();
    assert!(csv.starts_with("# fddlm infsup {"));
    assert_eq!(csv.lines().count(), 6);
    let j = read_json(&dir.path().join("out/infsup.json"));
    assert_eq!(j["report"]["element"], "elm2");
    // three levels are too few for a verdict
    assert_eq!(j["verdict"], "inconclusive");
}

#[test]
fn mesh_export_writes_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "mesh-export", r#"{"example": 4, "base_cells": 16, "level": 0}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let bg = fs::read_to_string(o.join("background.vtk")).unwrap();
    assert!(bg.contains("CELLS 256 1280"));
    let m = read_json(&o.join("mesh.json"));
    assert_eq!(m["resolution"]["background_cells_per_side"], 16);
    for name in ["immersed.vtk", "fragments.vtk"] {
        assert!(fs::read_to_string(o.join(name)).unwrap().contains("fddlm mesh-export"));
    }
}
