//! The llm-mode planner driven offline: a recorded transcript replays the
//! golden run without any network access.

use std::path::PathBuf;

use intent_assurance::assurance::{run_closed_loop, LoopPhase};
use intent_assurance::planner::llm::{
    LlmError, LlmPlanner, RecordingClient, ReplayClient, RuleBackedClient, Transcript,
};
use intent_assurance::planner::PlannerMode;
use intent_assurance::report::{emit_report, ReportFormat};
use intent_assurance::scenario::{execute, RunOptions, Scenario, ScenarioError};
use intent_assurance::testbed::Testbed;

const MODEL: &str = "rule-backed";

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/netflow-west.transcript.json")
}

fn replay_opts() -> RunOptions {
    RunOptions {
        planner: Some(PlannerMode::Replay),
        transcript: Some(fixture()),
        ..RunOptions::default()
    }
}

fn record() -> Transcript {
    let s = Scenario::netflow_west();
    let mut planner = LlmPlanner::new(RecordingClient::new(RuleBackedClient::default()), MODEL);
    let testbed = Testbed::new(s.testbed_config(0)).unwrap();
    let r = run_closed_loop(&s.intent, &mut planner, testbed, s.loop_config(false)).unwrap();
    assert_eq!(r.fulfillment.len(), 12);
    planner.into_client().into_transcript()
}

/// Rewrites the fixture. Run with `--ignored` after changing prompts or
/// the rule scripts.
#[test]
#[ignore]
fn regenerate_fixture() {
    record().save(&fixture()).unwrap();
}

#[test]
fn fixture_is_current() {
    let on_disk = Transcript::load(&fixture()).unwrap();
    assert!(on_disk == record(), "fixture is stale; rerun regenerate_fixture");
}

#[test]
fn replay_reproduces_rules_run() {
    let s = Scenario::netflow_west();
    let rules = execute(&s, &RunOptions::default()).unwrap();
    let replay = execute(&s, &replay_opts()).unwrap();
    assert_eq!(replay.planner, "replay");
    let texts = |r: &intent_assurance::assurance::ScenarioResult| {
        r.fulfillment
            .iter()
            .chain(r.assurance_policies())
            .map(|p| (p.text.clone(), p.feedback_text.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(texts(&rules), texts(&replay));
    assert_eq!(replay.timings.fulfillment_planner_s, None);
    assert_eq!(replay.kpis, rules.kpis);
}

#[test]
fn replay_is_byte_deterministic() {
    let s = Scenario::netflow_west();
    let a = emit_report(&execute(&s, &replay_opts()).unwrap(), ReportFormat::Json);
    let b = emit_report(&execute(&s, &replay_opts()).unwrap(), ReportFormat::Json);
    assert_eq!(a, b);
}

#[test]
fn replay_rejects_a_different_run() {
    let mut s = Scenario::netflow_west();
    s.intent = s.intent.replace("West", "East");
    // The first request already differs from the recording, so the loop
    // fails while formalizing.
    let r = execute(&s, &replay_opts()).unwrap();
    assert_eq!(r.final_phase, LoopPhase::Failed);
    assert!(r.failure.unwrap().contains("differs"));
    assert!(r.fulfillment.is_empty());
}

#[test]
fn replay_client_reports_mismatch_and_exhaustion() {
    let t = record();
    let first = t.entries[0].request.clone();
    let mut c = ReplayClient::new(Transcript {
        entries: t.entries[..1].to_vec(),
    });
    let mut other = first.clone();
    other.temperature += 0.5;
    use intent_assurance::planner::llm::ChatClient;
    assert!(matches!(c.complete(&other), Err(LlmError::ReplayMismatch { index: 0 })));
    assert!(c.complete(&first).is_ok());
    assert!(matches!(
        c.complete(&first),
        Err(LlmError::ReplayExhausted { index: 1 })
    ));
}

#[test]
fn replay_requires_transcript() {
    let opts = RunOptions {
        planner: Some(PlannerMode::Replay),
        ..RunOptions::default()
    };
    assert!(matches!(
        execute(&Scenario::netflow_west(), &opts),
        Err(ScenarioError::NoTranscript)
    ));
}
