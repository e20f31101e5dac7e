use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modelsel"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn drone() -> Value {
    serde_json::from_str(&fs::read_to_string(scenarios().join("drone_landing.json")).unwrap()).unwrap()
}

/// Drone dynamics over five steps with three of the eight models.
fn tiny() -> Value {
    let mut v = drone();
    v["horizon"] = json!(5);
    let models = v["suite"]["models"].as_array().unwrap().clone();
    v["suite"]["models"] = json!([models[0], models[3], models[7]]);
    v
}

fn write_json(dir: &TempDir, name: &str, v: &Value) -> String {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn rows(path: &str) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn plan_drone_expected() {
    let dir = TempDir::new().unwrap();
    let scenario = scenarios().join("drone_landing.json");
    let out = p(&dir, "plan.csv");
    let o = run(&["plan", "--scenario", scenario.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = rows(&out);
    assert_eq!(lines[0], "step,model_index");
    assert_eq!(lines.len(), 151);
    for (t, line) in lines[1..].iter().enumerate() {
        let (step, w) = line.split_once(',').unwrap();
        assert_eq!(step.parse::<usize>().unwrap(), t);
        assert!(w.parse::<usize>().unwrap() <= 7);
    }
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(p(&dir, "plan.json")).unwrap()).unwrap();
    assert_eq!(sidecar["status"], "optimal");
    assert_eq!(sidecar["sequence"].as_array().unwrap().len(), 150);
    assert!(sidecar["lower_bound"].as_f64().unwrap() <= sidecar["objective"].as_f64().unwrap());
}

#[test]
fn zero_alpha_plans_cheapest_model() {
    let dir = TempDir::new().unwrap();
    let mut v = drone();
    v["weights"]["alpha"] = json!(0.0);
    let scenario = write_json(&dir, "s.json", &v);
    let out = p(&dir, "plan.csv");
    let o = run(&["plan", "--scenario", &scenario, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(rows(&out)[1..].iter().all(|l| l.ends_with(",0")));
}

#[test]
fn solvers_agree_on_tiny_scenario() {
    let dir = TempDir::new().unwrap();
    let scenario = write_json(&dir, "s.json", &tiny());
    for mode in ["expected", "exact"] {
        let a = p(&dir, &format!("{mode}_bnb.csv"));
        let b = p(&dir, &format!("{mode}_ex.csv"));
        assert_eq!(code(&run(&["plan", "--mode", mode, "--scenario", &scenario, "--out", &a])), 0);
        let o = run(&["plan", "--mode", mode, "--solver", "exhaustive", "--scenario", &scenario, "--out", &b]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}

#[test]
fn exact_plan_is_deterministic_and_follows_seed() {
    let dir = TempDir::new().unwrap();
    let scenario = write_json(&dir, "s.json", &tiny());
    let out = |name: &str, seed: &str| {
        let path = p(&dir, name);
        let o = run(&["plan", "--mode", "exact", "--seed", seed, "--scenario", &scenario, "--out", &path]);
        assert_eq!(code(&o), 0);
        (fs::read(&path).unwrap(), fs::read(p(&dir, &name.replace(".csv", ".json"))).unwrap())
    };
    assert_eq!(out("a.csv", "5"), out("b.csv", "5"));
    let (_, json_a) = out("a.csv", "5");
    let (_, json_c) = out("c.csv", "6");
    assert_ne!(json_a, json_c);
}

#[test]
fn node_limit_gives_bound_gap_exit() {
    let dir = TempDir::new().unwrap();
    let mut v = drone();
    v["solver"]["node_limit"] = json!(1);
    let scenario = write_json(&dir, "s.json", &v);
    let out = p(&dir, "plan.csv");
    let o = run(&["plan", "--mode", "exact", "--scenario", &scenario, "--out", &out]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(p(&dir, "plan.json")).unwrap()).unwrap();
    assert_eq!(sidecar["status"], "bound_gap");
    assert_eq!(rows(&out).len(), 151);
}

#[test]
fn continuous_scalar_and_sdp_round_trip() {
    let dir = TempDir::new().unwrap();
    let scenario = scenarios().join("scalar_continuous.json");
    let out = p(&dir, "c.json");
    let o = run(&["plan-continuous", "--scenario", scenario.to_str().unwrap(), "--out", &out, "--export-sdp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!((v["c"][0].as_f64().unwrap() - 0.75).abs() < 1e-6);
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["assumption"]["holds"], true);

    let sdp = p(&dir, "c.sdp");
    let o = run(&["check-sdp", &sdp]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // Move the stored point outside the box.
    let text = fs::read_to_string(&sdp).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| match l.strip_prefix("point ") {
            Some(rest) => {
                let theta = rest.split_whitespace().last().unwrap();
                format!("point {:.16e} {theta}", 2.0)
            }
            None => l.to_string(),
        })
        .collect();
    let bad = p(&dir, "bad.sdp");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(&run(&["check-sdp", &bad])), 1);
}

#[test]
fn continuous_zero_alpha_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(scenarios().join("scalar_continuous.json")).unwrap()).unwrap();
    v["weights"]["alpha"] = json!(0.0);
    v["horizon"] = json!(4);
    v["dynamics"]["a"] = json!([[0.5]]);
    let scenario = write_json(&dir, "s.json", &v);
    let out = p(&dir, "c.json");
    let o = run(&["plan-continuous", "--scenario", &scenario, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["c"], json!([0.0, 0.0, 0.0, 0.0]));
}

#[test]
fn evaluate_writes_reports_deterministically() {
    let dir = TempDir::new().unwrap();
    let scenario = write_json(&dir, "s.json", &tiny());
    let (a, b) = (p(&dir, "a"), p(&dir, "b"));
    for out in [&a, &b] {
        let o = run(&["evaluate", "--scenario", &scenario, "--trials", "6", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("optimal - all_small"));
    }
    let csv = format!("{a}/trials.csv");
    let lines = rows(&csv);
    assert_eq!(lines[0], "trial,policy,control_gap,perception_cost,reward");
    assert_eq!(lines.len(), 1 + 5 * 6);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(format!("{b}/trials.csv")).unwrap());
    assert_eq!(fs::read(format!("{a}/summary.json")).unwrap(), fs::read(format!("{b}/summary.json")).unwrap());
    let summary: Value = serde_json::from_str(&fs::read_to_string(format!("{a}/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_trials"], 6);
    let aggregates = summary["aggregates"].as_array().unwrap();
    assert_eq!(aggregates.len(), 5);
    let reward = |name: &str| {
        aggregates.iter().find(|a| a["policy"] == name).unwrap()["reward"]["mean"].as_f64().unwrap()
    };
    for other in ["all_small", "all_large", "random", "optimal"] {
        assert!(reward("oracle") >= reward(other));
    }
}

#[test]
fn evaluate_degenerate_suite_ranks_by_perception_cost() {
    let dir = TempDir::new().unwrap();
    let mut v = tiny();
    v["suite"]["models"] = json!([
        { "family": "degenerate", "value": [0.0] },
        { "family": "degenerate", "value": [0.0] },
        { "family": "degenerate", "value": [0.0] }
    ]);
    let scenario = write_json(&dir, "s.json", &v);
    let out = p(&dir, "r");
    let o = run(&["evaluate", "--scenario", &scenario, "--trials", "1", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let beta = v["weights"]["beta"].as_f64().unwrap();
    for line in &rows(&format!("{out}/trials.csv"))[1..] {
        let f: Vec<&str> = line.split(',').collect();
        let (gap, per, reward): (f64, f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap());
        assert_eq!(gap, 0.0);
        assert_eq!(reward, -beta * per);
    }
    let ranking = stdout(&o);
    assert!(ranking.lines().next().unwrap().starts_with("1. all_small"));
}

#[test]
fn pareto_grid_output() {
    let dir = TempDir::new().unwrap();
    let scenario = write_json(&dir, "s.json", &tiny());
    let out = p(&dir, "pareto.csv");
    let o = run(&["pareto", "--scenario", &scenario, "--solver", "exhaustive", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"));
    let lines = rows(&out);
    assert_eq!(lines[0], "alpha,beta,control_term,perception_cost,sequence");
    assert_eq!(lines.len(), 1 + 24);
}

#[test]
fn verify_quick_and_fault_injection() {
    let o = run(&["verify", "quick"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 8);

    let o = run(&["verify", "quick", "--inject-psi-asymmetry", "1e-3"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL psi_psd"));
    assert!(stderr(&o).contains("psi_psd"));

    let scenario = scenarios().join("drone_landing.json");
    let o = run(&["verify", "quick", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS psi_psd: 41/41"));
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let mut v = tiny();
    v.as_object_mut().unwrap().remove("upsilon");
    let missing = write_json(&dir, "missing.json", &v);
    let o = run(&["plan", "--scenario", &missing]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("upsilon"));

    let ragged = p(&dir, "ragged.json");
    let text = fs::read_to_string(scenarios().join("scalar_continuous.json"))
        .unwrap()
        .replace("\"a\": [[0.0]]", "\"a\": [[0.0, 1.0], [0.0]]");
    fs::write(&ragged, text).unwrap();
    let o = run(&["plan-continuous", "--scenario", &ragged]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line"));

    assert_eq!(code(&run(&["plan"])), 1);
    assert_eq!(code(&run(&["plan", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn init_matches_shipped_scenario() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "drone.json");
    assert_eq!(code(&run(&["init", "--out", &out])), 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(scenarios().join("drone_landing.json")).unwrap());
}
