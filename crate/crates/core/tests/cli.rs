use std::path::Path;
use std::process::Command;

use netmanip::altmin::{run, Scheme, DEFAULT_MAX_ITERS};
use netmanip::cli::{parse_scenario, parse_scenario_str, Report, ScenarioFile, DEFAULT_SEED};
use netmanip::Error;
use serde_json::Value;

const BASE: &str = r#"{
  "network": [[0.75, 0.25], [0.25, 0.75]],
  "horizon": 1,
  "agents": [
    {"aspired_state": [0.8, 0.2], "choice_model": {"type": "mnl", "mu": 1.0}},
    {"aspired_state": [0.3, 0.7], "choice_model": {"type": "mnl", "mu": 0.8}}
  ],
  "organizations": [
    {"eta": 1.0, "tau": 40.0, "anchor": [0.5, 0.5]},
    {"eta": 1.0, "tau": 30.0, "anchor": [0.2, 0.8]}
  ],
  "delta1": 1e-3,
  "delta2": 1e-3,
  "seed": 7
}"#;

fn with(edit: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(BASE).unwrap();
    edit(&mut v);
    v.to_string()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_netmanip"));
    c.env("RUST_LOG", "warn");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_file_gets_defaults() {
    let text = with(|v| {
        let o = v.as_object_mut().unwrap();
        o.remove("delta1");
        o.remove("delta2");
        o.remove("seed");
    });
    let s = parse_scenario_str(&text, None).unwrap();
    assert_eq!(s.delta1, 0.0);
    assert_eq!(s.delta2, 0.0);
    assert_eq!(s.seed, DEFAULT_SEED);
    assert_eq!(s.max_iters, DEFAULT_MAX_ITERS);
    assert_eq!(s.x0.matrix().iter().copied().collect::<Vec<_>>(), vec![0.5; 4]);
}

#[test]
fn aspired_state_off_simplex_names_the_agent() {
    let text = with(|v| v["agents"][1]["aspired_state"] = serde_json::json!([0.6, 0.3]));
    let err = parse_scenario_str(&text, None).unwrap_err();
    assert!(matches!(err, Error::InvalidSimplex { .. }), "{err:?}");
    assert!(err.to_string().contains("agent 1"), "{err}");
}

#[test]
fn overlapping_nests_are_rejected() {
    let text = with(|v| {
        v["agents"][0]["choice_model"] = serde_json::json!({"type": "nl", "nests": [[1, 2], [2]], "mu": [0.5, 0.5]})
    });
    let err = parse_scenario_str(&text, None).unwrap_err();
    assert!(matches!(err, Error::InvalidModel(ref m) if m.contains("agent 0")), "{err:?}");
}

#[test]
fn unknown_field_reports_position() {
    let text = with(|v| v["organizations"][0]["weight"] = 1.0.into());
    match parse_scenario_str(&text, None).unwrap_err() {
        Error::Parse { line, column, message } => {
            assert!(line >= 1 && column >= 1);
            assert!(message.contains("weight"), "{message}");
        }
        e => panic!("{e:?}"),
    }
}

#[test]
fn wrong_anchor_length() {
    let text = with(|v| v["organizations"][1]["anchor"] = serde_json::json!([0.2, 0.3, 0.5]));
    let err = parse_scenario_str(&text, None).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "{err:?}");
}

#[test]
fn serialize_then_parse_is_identity() {
    let text = with(|v| {
        v["agents"][0]["choice_model"] = serde_json::json!({"type": "nl", "nests": [[2], [1]], "mu": [0.4, 0.9]});
        v["x0"] = serde_json::json!([[0.1, 0.9], [0.65, 0.35]]);
        v["max_iters"] = 17.into();
    });
    let s = parse_scenario_str(&text, None).unwrap();
    let file = ScenarioFile::from_scenario(&s).unwrap();
    let again = parse_scenario_str(&file.to_json(), None).unwrap();
    assert_eq!(s, again);
    assert_eq!(ScenarioFile::from_json(&file.to_json()).unwrap(), file);
}

#[test]
fn network_from_relative_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "net.csv", "0.75,0.25\n0.25,0.75\n");
    let path = write(dir.path(), "s.json", &with(|v| v["network"] = "net.csv".into()));
    let s = parse_scenario(&path).unwrap();
    assert_eq!(s, parse_scenario_str(BASE, None).unwrap());
}

#[test]
fn zero_tolerance_has_zero_radius() {
    let text = with(|v| {
        v["delta1"] = 0.0.into();
        v["delta2"] = 0.0.into();
    });
    let s = parse_scenario_str(&text, None).unwrap();
    let report = Report::new(&run(&s, Scheme::Inexact, None).unwrap(), 0.0);
    assert_eq!(report.limit_radius_x, Some(0.0));
    assert_eq!(report.limit_radius_p, Some(0.0));
}

#[test]
fn unstable_report_omits_bounds() {
    let text = with(|v| {
        v["organizations"][0]["tau"] = 0.5.into();
        v["organizations"][1]["tau"] = 0.5.into();
    });
    let s = parse_scenario_str(&text, None).unwrap();
    let report = Report::new(&run(&s, Scheme::Exact, None).unwrap(), 0.0);
    let json: Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["assumption_violated"], Value::Bool(true));
    for key in ["bound_violations", "tight_bound_violations", "limit_radius_x", "limit_radius_p"] {
        assert!(json.get(key).is_none(), "{key} present");
    }
    assert!(json["constants"]["lambda"].as_f64().unwrap() >= 1.0);
}

#[test]
fn binary_run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.json", BASE);
    let trace = dir.path().join("trace.csv");
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["bound_violations"], Value::from(0));
    assert_eq!(report["assumption_violated"], Value::Bool(false));
    let csv = std::fs::read_to_string(&trace).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "iter,phi,dist_x,dist_p,bound_x,bound_p,gap_p_realized,gap_x_realized");
    assert_eq!(csv.lines().count(), report["iterations"].as_u64().unwrap() as usize + 2);
}

#[test]
fn binary_reference_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.json", BASE);
    let reference = dir.path().join("ref.json");
    let st = bin().args(["reference", "--scenario"]).arg(&scenario).arg("--out").arg(&reference).status().unwrap();
    assert!(st.success());
    let out = bin()
        .args(["run", "--exact", "--format", "json", "--scenario"])
        .arg(&scenario)
        .arg("--ref-optimum")
        .arg(&reference)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["final_dist_x"].as_f64().unwrap() < 1e-8);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"network\": [[1.0]], \"horizon\": 1,\n \"bogus\": 3}");
    let code = |path: &Path, cmd: &str| {
        bin().arg(cmd).arg("--scenario").arg(path).output().unwrap().status.code()
    };
    assert_eq!(code(&bad, "run"), Some(2));

    let off = write(
        dir.path(),
        "off.json",
        &with(|v| v["agents"][0]["aspired_state"] = serde_json::json!([0.5, 0.4])),
    );
    let out = bin().arg("constants").arg("--scenario").arg(&off).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent 0"));

    assert_eq!(code(&dir.path().join("missing.json"), "run"), Some(1));

    let good = write(dir.path(), "s.json", BASE);
    let out = bin().arg("constants").arg("--scenario").arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().last() == Some("stable"), "{text}");
}

#[test]
fn binary_verify_passes_on_stable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "s.json", BASE);
    let out = bin()
        .args(["verify", "--pairs", "100", "--draws", "20000", "--scenario"])
        .arg(&good)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("9 checks, 0 failed"), "{text}");
}
