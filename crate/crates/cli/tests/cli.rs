use std::fs;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intent-assure"))
        .args(args)
        .env_remove("INTENT_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_bundled_scenario_as_text() {
    let o = bin(&["run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("Fulfillment policies (12)"));
    assert!(text.contains("Assurance policies (4)"));
    assert!(text.contains("final phase: assured"));
}

#[test]
fn json_output_to_file_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = bin(&[
            "run",
            "--seed",
            "4",
            "--format",
            "json",
            "--output",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        assert!(o.stdout.is_empty());
    }
    let first = fs::read_to_string(&a).unwrap();
    assert_eq!(first, fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["seed"], 4);
    assert_eq!(v["final_phase"], "assured");
}

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["scenario"]);
    assert!(o.status.success());
    let mut doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    doc["run"]["horizon_hours"] = 3.into();
    doc["zones"][0]["inventory"] = serde_json::json!({});
    let path = dir.path().join("empty.json");
    fs::write(&path, doc.to_string()).unwrap();
    // A run that ends in the failed phase exits with 2.
    let o = bin(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("no_capacity"));
}

#[test]
fn replay_from_bundled_fixture() {
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/fixtures/netflow-west.transcript.json"
    );
    let rules = stdout(&bin(&["run", "--format", "json"]));
    let o = bin(&[
        "run",
        "--planner",
        "replay",
        "--transcript",
        fixture,
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let replay: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rules: serde_json::Value = serde_json::from_str(&rules).unwrap();
    assert_eq!(replay["planner"], "replay");
    assert_eq!(replay["fulfillment"], rules["fulfillment"]);
    assert_eq!(replay["corrections"], rules["corrections"]);
}

#[test]
fn sweep_summary() {
    let o = bin(&["sweep", "--seeds", "5", "--hours", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("5 seeds: 5 assured"));
    let o = bin(&[
        "sweep",
        "--seeds",
        "3",
        "--hours",
        "12",
        "--sequential",
        "--format",
        "json",
    ]);
    let v: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.len(), 3);
}

#[test]
fn errors_are_reported() {
    let o = bin(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    let o = bin(&["run", "--planner", "replay"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("transcript"));

    let o = bin(&["run", "--planner", "llm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("INTENT_LLM_ENDPOINT"));

    let o = bin(&["run", "--format", "yaml"]);
    assert!(!o.status.success());
}
