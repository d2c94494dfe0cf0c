use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gsnell(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsnell"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), config).unwrap();
    dir
}

fn read_json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
}

const STOPPING: &str = r#"{
  "model": {"T": 1, "N": 3},
  "driver": {"kind": "clipped_quadratic", "alpha": 1.0, "z_max": 1.0},
  "terminal": {"kind": "tanh_w"},
  "barrier": {"kind": "tanh_w", "shift": 0.05},
  "claim": {"kind": "call_on_W", "strike": 0.0},
  "alpha": 0.5,
  "agent": {"payment": {"kind": "tanh_w", "shift": 0.5}}
}"#;

#[test]
fn zero_driver_root_is_the_plain_expectation() {
    let table = serde_json::json!({
        "model": {"T": 1, "N": 2},
        "terminal": {"kind": "table", "values": [1.0, 2.0, 4.0, 9.0]}
    });
    let dir = setup(&table.to_string());
    let out = gsnell(&["gexp", "--config", "c.json", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir, "r.json");
    assert_eq!(r["values"]["root"], 4.0);
    assert_eq!(r["values"]["per_node"][1], serde_json::json!([1.5, 6.5]));
}

#[test]
fn result_document_has_the_documented_schema() {
    let dir = setup(STOPPING);
    let out = gsnell(&["reflect", "--config", "c.json", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir, "r.json");
    let mut keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["config_echo", "diagnostics", "timing", "values"]);
    assert!(r["timing"].is_null());
    assert!(r["values"]["root"].is_number());
    assert_eq!(r["values"]["per_node"].as_array().unwrap().len(), 4);
    for key in ["skorokhod_residual", "bmo_norm", "max_oracle_gap"] {
        assert!(r["diagnostics"].get(key).is_some(), "{key}");
    }
    assert_eq!(r["diagnostics"]["skorokhod_residual"], 0.0);
    assert_eq!(r["config_echo"]["model"]["N"], 3);
}

#[test]
fn per_node_values_are_omitted_on_large_trees() {
    let dir = setup(STOPPING);
    let out = gsnell(
        &["gexp", "--config", "c.json", "--steps", "40", "--topology", "recomb-lattice", "--out", "r.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir, "r.json");
    assert!(r["values"]["per_node"].is_null());
    assert_eq!(r["config_echo"]["model"]["N"], 40);
    assert_eq!(r["config_echo"]["model"]["topology"], "recomb_lattice");
}

#[test]
fn oracle_reports_both_sides_and_the_gap() {
    let dir = setup(STOPPING);
    let out = gsnell(&["oracle", "--config", "c.json", "--depth", "3", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir, "r.json");
    let oracle = r["values"]["oracle"].as_array().unwrap();
    let envelope = r["values"]["envelope"].as_array().unwrap();
    assert_eq!(oracle.len(), 1);
    assert_eq!(envelope.len(), 1);
    assert_eq!(r["values"]["rules"], 26);
    let gap = r["diagnostics"]["max_oracle_gap"].as_f64().unwrap();
    assert!(gap <= 1e-10);
    let manual = (oracle[0].as_f64().unwrap() - envelope[0].as_f64().unwrap()).abs();
    assert_eq!(gap, manual);
}

#[test]
fn converge_writes_the_csv_table() {
    let dir = setup(r#"{"model": {"T": 1, "N": 8, "topology": "recomb_lattice"}, "terminal": {"kind": "tanh_w"}}"#);
    let out = gsnell(
        &["converge", "--config", "c.json", "--doubling", "6", "--n0", "8", "--csv", "t.csv", "--out", "r.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,dt,value,abs_error,order");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("8,0.125,"));
    assert!(lines[1].ends_with(','));
    let last_order: f64 = lines[6].rsplit(',').next().unwrap().parse().unwrap();
    assert!((last_order - 1.0).abs() < 0.1, "{last_order}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup(STOPPING);
    for cmd in ["gexp", "reflect", "penalize", "oracle", "risk", "scenario-pa"] {
        let a = gsnell(&[cmd, "--config", "c.json", "--out", "a.json"], dir.path());
        let b = gsnell(
            &[cmd, "--config", "c.json", "--out", "b.json", "--execution", "sequential"],
            dir.path(),
        );
        let c = gsnell(&[cmd, "--config", "c.json", "--out", "c2.json"], dir.path());
        assert!(a.status.success() && b.status.success() && c.status.success(), "{cmd}");
        let a = std::fs::read(dir.path().join("a.json")).unwrap();
        let c = std::fs::read(dir.path().join("c2.json")).unwrap();
        assert_eq!(a, c, "{cmd}");
        // Only the echoed execution policy may differ.
        let mut va: Value = serde_json::from_slice(&a).unwrap();
        let mut vb = read_json(&dir, "b.json");
        va["config_echo"]["execution"] = Value::Null;
        vb["config_echo"]["execution"] = Value::Null;
        assert_eq!(va, vb, "{cmd}");
    }
}

#[test]
fn timing_is_recorded_on_request() {
    let dir = setup(STOPPING);
    let out = gsnell(&["gexp", "--config", "c.json", "--timing", "--out", "r.json"], dir.path());
    assert!(out.status.success());
    assert!(read_json(&dir, "r.json")["timing"]["seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn principal_agent_scenario_runs_the_brute_force() {
    let dir = setup(STOPPING);
    let out = gsnell(&["scenario-pa", "--config", "c.json", "--horizon", "0.75", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir, "r.json");
    let root = r["values"]["root"].as_f64().unwrap();
    let brute = r["values"]["bruteforce_value"].as_f64().unwrap();
    assert!(brute <= root + 1e-12);
    assert!(r["diagnostics"]["max_oracle_gap"].as_f64().unwrap() <= 0.5);
    let dual = r["values"]["dual_value"].as_f64().unwrap();
    assert!((dual + brute).abs() <= 1e-12);
}

#[test]
fn exit_codes() {
    let dir = setup(STOPPING);
    let code = |args: &[&str]| gsnell(args, dir.path()).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["gexp", "--help"]), 0);
    assert_eq!(code(&[]), 64);
    assert_eq!(code(&["frobnicate"]), 64);
    assert_eq!(code(&["gexp", "--no-such-flag"]), 64);
    assert_eq!(code(&["gexp", "--steps", "many"]), 64);
    assert_eq!(code(&["gexp", "--config", "missing.json"]), 2);
    assert_eq!(code(&["oracle", "--config", "c.json", "--depth", "7"]), 2);
    assert_eq!(code(&["risk"]), 2);
    assert_eq!(code(&["gexp", "--config", "c.json", "--horizon=-1"]), 2);

    std::fs::write(dir.path().join("bad.json"), r#"{"model": {"T": 1, "N": 3}, "colour": 1}"#).unwrap();
    assert_eq!(code(&["gexp", "--config", "bad.json"]), 2);

    // Terminal above an upper barrier is infeasible: a solver failure.
    let infeasible = r#"{"model": {"T": 1, "N": 2},
        "terminal": {"kind": "constant", "value": 2}, "barrier": {"kind": "constant", "value": 1}}"#;
    std::fs::write(dir.path().join("inf.json"), infeasible).unwrap();
    assert_eq!(code(&["reflect", "--config", "inf.json"]), 3);

    // Entropic driver far beyond its step condition.
    let steep = r#"{"model": {"T": 1, "N": 2}, "driver": {"kind": "entropic", "alpha": 50},
        "terminal": {"kind": "call_on_W", "strike": 0, "scale": 10}}"#;
    std::fs::write(dir.path().join("steep.json"), steep).unwrap();
    assert_eq!(code(&["gexp", "--config", "steep.json"]), 2);
}
