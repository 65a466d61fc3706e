use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairhc::fixtures;
use fairhc::netmodel::{serialize_feeder, Feeder};

fn fairhc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairhc"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn write_feeder(dir: &Path, name: &str, feeder: &Feeder) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serialize_feeder(feeder)).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CYCLIC: &str = r#"{
  "s_base_kva": 100, "v_base_v": 230, "dg_cap_kw": 10,
  "buses": [{"id": "s", "kind": "slack"}, {"id": "a", "kind": "load"}, {"id": "b", "kind": "load"}],
  "lines": [
    {"from": "s", "to": "a", "r_ohm": 0.1, "x_ohm": 0.01, "length_m": 50, "i_rated_a": 200, "u_nom_v": 230},
    {"from": "a", "to": "b", "r_ohm": 0.1, "x_ohm": 0.01, "length_m": 50, "i_rated_a": 200, "u_nom_v": 230},
    {"from": "b", "to": "s", "r_ohm": 0.1, "x_ohm": 0.01, "length_m": 50, "i_rated_a": 200, "u_nom_v": 230}
  ],
  "loads": [{"bus": "a", "p_kw": 1, "q_kvar": 0}, {"bus": "b", "p_kw": 1, "q_kvar": 0}],
  "connection": {"bus": "s", "p_max_kw": 100, "q_max_kvar": 100}
}"#;

#[test]
fn validate_reports_cycles_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, CYCLIC).unwrap();
    let out = fairhc(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not radial"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);

    let good = write_feeder(dir.path(), "good.json", &fixtures::linear_three_bus_feeder());
    let out = fairhc(&["validate", s(&good)]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    std::fs::write(&p, "{ not json").unwrap();
    assert_eq!(fairhc(&["validate", s(&p)]).status.code(), Some(2));
    assert_eq!(fairhc(&["validate", "/nonexistent/feeder.json"]).status.code(), Some(2));
    let good = write_feeder(dir.path(), "good.json", &fixtures::linear_three_bus_feeder());
    assert_eq!(fairhc(&["solve", s(&good), "--policy", "fair"]).status.code(), Some(2));
    assert_eq!(fairhc(&["solve", s(&good), "--policy", "bounded", "--alpha", "2", "--beta", "0"]).status.code(), Some(2));
    assert_eq!(fairhc(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn solve_emits_solution_json() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::linear_three_bus_feeder());
    let out = fairhc(&["solve", s(&f), "--policy", "utilitarian"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["solution"]["policy"], "utilitarian");
    assert_eq!(v["solution"]["status"], "optimal");
    assert_eq!(v["solution"]["allocation"].as_array().unwrap().len(), 2);
    assert_eq!(v["kpi"]["pof"], 0.0);
    assert_eq!(v["manifest"]["timestamp"], "2023-11-14T22:13:20Z");
    assert_eq!(v["manifest"]["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn bounded_solve_uses_flags() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::star_three_bus_feeder());
    let out = fairhc(&["solve", s(&f), "--policy", "bounded", "--alpha", "0.5", "--beta", "0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["manifest"]["policy"], "bounded:alpha=0.5,beta=0.5");
    let pof = v["kpi"]["pof"].as_f64().unwrap();
    assert!((-1e-3..=1.0).contains(&pof));
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::branched_four_bus_feeder());
    let args = ["solve", s(&f), "--policy", "bargaining:k=0.4", "--starts", "5", "--seed", "7"];
    let a = fairhc(&args);
    let b = fairhc(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn infeasible_baseline_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::two_bus_feeder(0.05, 0.0, 3.0, 1.05));
    let out = fairhc(&["solve", s(&f), "--policy", "egalitarian"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn pareto_writes_steps_plus_two_rows_and_knee_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::linear_three_bus_feeder());
    let csv = dir.path().join("f.csv");
    let out = fairhc(&["pareto", s(&f), "--family", "bargaining", "--steps", "21", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("family,param,hc_kw,pof,gini,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 23);
    assert!(rows.iter().all(|r| r.split(',').count() == 6));

    let parallel = dir.path().join("g.csv");
    let out = fairhc(&["pareto", s(&f), "--family", "bargaining", "--steps", "21", "--jobs", "3", "--out", s(&parallel)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(&parallel).unwrap(), text.as_bytes());

    let out = fairhc(&["knee", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["knee"]["gini"].is_number());
}

#[test]
fn pareto_rejects_unknown_family() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::linear_three_bus_feeder());
    assert_eq!(fairhc(&["pareto", s(&f), "--family", "lottery"]).status.code(), Some(2));
}

#[test]
fn synth_output_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("syn.json");
    let out = fairhc(&["synth", "--layout", "branched", "--n-loads", "5", "--trunk-m", "500", "--out", s(&p)]);
    assert_eq!(out.status.code(), Some(0));
    let out = fairhc(&["validate", s(&p)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok: 11 buses, 10 lines, 5 loads");
    let out = fairhc(&["stats", s(&p)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["total_length"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn pf_reports_the_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_feeder(dir.path(), "f.json", &fixtures::two_bus_feeder(0.05, 0.0, 0.0, 1.05));
    let out = fairhc(&["pf", s(&f), "--dg-kw", "1050"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["state"]["v"][1].as_f64().unwrap() - 1.05).abs() < 1e-9);
    let out = fairhc(&["pf", s(&f), "--dg-kw", "1200"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["feasible"], false);
    assert_eq!(v["violated"][0], "v_upper[a]");
}

#[test]
fn experiment_reports_both_layouts() {
    let out = fairhc(&["experiment", "--n-loads", "4", "--total-m", "800"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["linear"]["layout"], "linear");
    assert_eq!(v["branched"]["n_loads"], 4);
    assert!(v["linear_pays_more"].is_boolean());
}
