use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prior-completion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cli")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_PLAN: &str = r#"{
    "n": 12, "r": 2, "r_prime": 4,
    "theta_u_deg": [3.0, 8.0], "theta_v_deg": [2.0, 6.0],
    "p_values": [0.6, 0.9], "trials": 3, "seed": 7
}"#;

#[test]
fn phase_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", SMALL_PLAN);
    let out = dir.path().join("out");
    let o = run(&["phase", "--plan", &plan, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("phase.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,p,trials,successes,success_rate,median_nre,mean_iters"));
    assert_eq!(lines.count(), 3 * 2);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("phase.json")).unwrap()).unwrap();
    assert_eq!(json["aggregates"].as_array().unwrap().len(), 6);
    assert_eq!(json["records"].as_array().unwrap().len(), 3 * 2 * 3);
    assert!(json["weights"]["multi"]["weights"]["lambda1"].is_array());
}

#[test]
fn phase_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", SMALL_PLAN);
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{k}"));
        let o = run(&["phase", "--plan", &plan, "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(o.status.success());
        let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("phase.json")).unwrap()).unwrap();
        outputs.push((json["records"].clone(), json["aggregates"].clone(), json["weights"].clone()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn weights_multi_and_single() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let angles = ["--theta-u", "1.32,1.72,2.11,3.07", "--theta-v", "1.08,1.70,2.37,2.73"];
    for mode in ["multi", "single"] {
        let mut args = vec!["weights"];
        args.extend(angles);
        args.extend(["--mode", mode, "--out", out]);
        let o = run(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("weights.json")).unwrap()).unwrap();
        assert_eq!(json["mode"], mode);
        assert_eq!(json["feasible"], true);
        let csv = fs::read_to_string(dir.path().join("weights.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("side,index,theta_deg,weight"));
        assert_eq!(csv.lines().count(), 1 + 2 * 8);
    }
}

#[test]
fn bounds_rank_the_weightings() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", r#"{"preset": "fig1"}"#);
    let o = run(&["bounds", "--plan", &plan, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bounds.json")).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    let p: Vec<f64> = rows.iter().map(|r| r["p_lower"].as_f64().unwrap()).collect();
    assert_eq!(rows[0]["mode"], "none");
    assert!(p[2] <= p[1] && p[1] <= p[0], "{p:?}");
    assert_eq!(rows[0]["alpha4"], 1.0);
    assert_eq!(rows[0]["alpha5"], 4.0);
}

#[test]
fn fdd_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let chan = write(dir.path(), "chan.json", r#"{"velocities": [1, 1, 2, 2]}"#);
    let plan = write(dir.path(), "plan.json", r#"{"p_values": [0.9], "trials": 2, "methods": ["standard", "multi"]}"#);
    let o = run(&["fdd", "--config", &chan, "--plan", &plan, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fdd.json")).unwrap()).unwrap();
    assert_eq!(json["theta_u_deg"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("fdd.csv").exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"r": 9, "r_prime": 8}"#,
        r#"{"p_values": [1.5]}"#,
        r#"{"trials": 0}"#,
        r#"{"unknown_field": 1}"#,
        r#"{"n": 20,"#,
    ];
    for body in cases {
        let plan = write(dir.path(), "plan.json", body);
        let o = run(&["phase", "--plan", &plan, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}");
    }
    let o = run(&["weights", "--theta-u", "100", "--theta-v", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["weights", "--theta-u", "1,2", "--theta-v", "1", "--mode", "diagonal"]);
    assert_eq!(o.status.code(), Some(2));
    let chan = write(dir.path(), "chan.json", r#"{"velocities": [1.0]}"#);
    let plan = write(dir.path(), "plan2.json", "{}");
    let o = run(&["fdd", "--config", &chan, "--plan", &plan]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = run(&["phase", "--plan", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let plan = write(dir.path(), "plan.json", SMALL_PLAN);
    let blocker = write(dir.path(), "file", "");
    let o = run(&["phase", "--plan", &plan, "--out", &format!("{blocker}/sub")]);
    assert_eq!(o.status.code(), Some(3));
}
