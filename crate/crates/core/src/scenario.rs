//! Scenario files: one JSON document holding everything a run needs.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assurance::{run_closed_loop, LoopConfig, LoopError, ScenarioResult};
use crate::health::{AgentPolicy, ResourceBands};
use crate::planner::llm::{LlmError, LlmPlanner, ReplayClient, Transcript};
use crate::planner::{ActionSpec, Planner, PlannerMode, RulePlanner};
use crate::policy::Verb;
use crate::testbed::{AgentConfig, FaultEvent, Testbed, TestbedConfig, TestbedError, Timings, ZoneConfig};

const PAPER_USECASE: &str = include_str!("../scenarios/netflow-west.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario field `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("a transcript path is required in replay mode")]
    NoTranscript,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Testbed(#[from] TestbedError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "unnamed")]
    pub name: String,
    pub intent: String,
    #[serde(default = "default_zones")]
    pub zones: Vec<ZoneConfig>,
    #[serde(default)]
    pub agents: AgentSection,
    #[serde(default)]
    pub bands: ResourceBands,
    #[serde(default = "ActionSpec::default_registry")]
    pub actions: Vec<ActionSpec>,
    /// `at` is seconds after fulfillment completes.
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub run: RunSection,
}

fn unnamed() -> String {
    "scenario".into()
}

fn default_zones() -> Vec<ZoneConfig> {
    vec![ZoneConfig::west()]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    /// How agent probes fold into one agent-health level.
    pub rule: AgentPolicy,
    /// Agents per zone; a zone without an entry gets one per switch.
    pub roster: IndexMap<String, Vec<AgentConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub horizon_hours: u64,
    pub seed: u64,
    pub planner: PlannerMode,
    pub transcript: Option<PathBuf>,
    pub probe_period: u64,
    pub timings: Timings,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon_hours: 720,
            seed: 0,
            planner: PlannerMode::Rules,
            transcript: None,
            probe_period: 60,
            timings: Timings::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut scenario = Self::from_json(&text)?;
        if let (Some(t), Some(dir)) = (&scenario.run.transcript, path.parent()) {
            if t.is_relative() {
                scenario.run.transcript = Some(dir.join(t));
            }
        }
        Ok(scenario)
    }

    /// The bundled use case: collectors for Netflow in zone West at
    /// 99.99 %, with `collector_2` losing power 90 minutes in.
    pub fn netflow_west() -> Self {
        Self::from_json(PAPER_USECASE).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.intent.trim().is_empty() {
            return bad("intent is empty".into());
        }
        if self.run.horizon_hours == 0 {
            return bad("run.horizon_hours must be positive".into());
        }
        if self.run.probe_period == 0 {
            return bad("run.probe_period must be positive".into());
        }
        if self.zones.is_empty() {
            return bad("at least one zone is required".into());
        }
        for zone in self.agents.roster.keys() {
            if !self.zones.iter().any(|z| &z.name == zone) {
                return bad(format!("agents.roster names undefined zone {zone}"));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if !matches!(a.name.parse::<Verb>(), Ok(Verb::Restart | Verb::Recreate)) {
                return bad(format!("actions[{i}]: `{}` is not a corrective verb", a.name));
            }
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return bad(format!("actions[{i}]: weight must be positive"));
            }
            if self.actions[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("actions[{i}]: `{}` listed twice", a.name));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.target.trim().is_empty() {
                return bad(format!("faults[{i}]: target is empty"));
            }
        }
        Ok(())
    }

    pub fn horizon_secs(&self) -> u64 {
        self.run.horizon_hours * 3600
    }

    /// Testbed configuration with the seed in effect; action durations
    /// override the matching timing entries.
    pub fn testbed_config(&self, seed: u64) -> TestbedConfig {
        let zones = self
            .zones
            .iter()
            .map(|z| {
                let mut z = z.clone();
                if let Some(roster) = self.agents.roster.get(&z.name) {
                    z.agents = roster.clone();
                }
                z
            })
            .collect();
        let mut timings = self.run.timings;
        for a in &self.actions {
            match a.name.as_str() {
                "restart" => timings.restart = a.duration,
                "recreate" => timings.recreate = a.duration,
                _ => {}
            }
        }
        TestbedConfig {
            zones,
            timings,
            probe_period: self.run.probe_period,
            bands: self.bands.clone(),
            agent_policy: self.agents.rule,
            seed,
        }
    }

    pub fn loop_config(&self, record_latency: bool) -> LoopConfig {
        LoopConfig {
            horizon: self.horizon_secs(),
            actions: self.actions.clone(),
            faults: self.faults.clone(),
            record_latency,
            ..LoopConfig::default()
        }
    }
}

/// Per-run overrides of the scenario's `run` section.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub planner: Option<PlannerMode>,
    /// Transcript to replay from (replay mode).
    pub transcript: Option<PathBuf>,
    /// Where to save the exchanges of an llm-mode run.
    pub record: Option<PathBuf>,
}

impl RunOptions {
    pub fn seed(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }
}

pub fn mode_name(mode: PlannerMode) -> &'static str {
    match mode {
        PlannerMode::Rules => "rules",
        PlannerMode::Llm => "llm",
        PlannerMode::Replay => "replay",
    }
}

/// Runs the scenario end to end.
pub fn execute(scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioResult, ScenarioError> {
    let seed = opts.seed.unwrap_or(scenario.run.seed);
    let mode = opts.planner.unwrap_or(scenario.run.planner);
    let mut result = match mode {
        PlannerMode::Rules => run_with(scenario, seed, &mut RulePlanner::new(), false)?,
        PlannerMode::Replay => {
            let path = opts
                .transcript
                .as_ref()
                .or(scenario.run.transcript.as_ref())
                .ok_or(ScenarioError::NoTranscript)?;
            let transcript = Transcript::load(path)?;
            let model = transcript
                .entries
                .first()
                .map(|e| e.request.model.clone())
                .unwrap_or_default();
            run_with(
                scenario,
                seed,
                &mut LlmPlanner::new(ReplayClient::new(transcript), model),
                false,
            )?
        }
        PlannerMode::Llm => run_live(scenario, seed, opts.record.as_deref())?,
    };
    result.scenario = scenario.name.clone();
    result.planner = mode_name(mode).to_string();
    Ok(result)
}

fn run_with(
    scenario: &Scenario,
    seed: u64,
    planner: &mut dyn Planner,
    record_latency: bool,
) -> Result<ScenarioResult, ScenarioError> {
    let testbed = Testbed::new(scenario.testbed_config(seed))?;
    Ok(run_closed_loop(
        &scenario.intent,
        planner,
        testbed,
        scenario.loop_config(record_latency),
    )?)
}

#[cfg(feature = "http")]
fn run_live(scenario: &Scenario, seed: u64, record: Option<&Path>) -> Result<ScenarioResult, ScenarioError> {
    use crate::planner::llm::{HttpChatClient, RecordingClient};

    let client = HttpChatClient::from_env()?;
    let model = client.model().to_string();
    let mut planner = LlmPlanner::new(RecordingClient::new(client), model);
    let result = run_with(scenario, seed, &mut planner, true);
    if let Some(path) = record {
        planner.into_client().into_transcript().save(path)?;
    }
    result
}

#[cfg(not(feature = "http"))]
fn run_live(_: &Scenario, _: u64, _: Option<&Path>) -> Result<ScenarioResult, ScenarioError> {
    Err(LlmError::Config("built without the `http` feature".into()).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_defaults() {
        let s = Scenario::netflow_west();
        assert_eq!(s.run.seed, 0);
        assert_eq!(s.run.horizon_hours, 720);
        assert_eq!(s.run.planner, PlannerMode::Rules);
        assert_eq!(s.zones[0].name, "West");
        assert_eq!(s.faults[0].target, "collector_2");
        assert_eq!(s.actions, ActionSpec::default_registry());
    }

    #[test]
    fn missing_intent_names_field() {
        let err = Scenario::from_json(r#"{"zones": []}"#).unwrap_err().to_string();
        assert!(err.contains("intent"), "{err}");
    }

    #[test]
    fn nested_error_path() {
        let err = Scenario::from_json(r#"{"intent": "x", "run": {"planner": "oracle"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("run.planner"), "{err}");
    }

    #[test]
    fn agent_section_forms() {
        let s = Scenario::from_json(r#"{"intent": "x", "agents": {}}"#).unwrap();
        assert_eq!(s.agents.rule, AgentPolicy::Strict);
        let s =
            Scenario::from_json(r#"{"intent": "x", "agents": {"rule": {"policy": "count_match", "k": 2}}}"#).unwrap();
        assert_eq!(s.agents.rule, AgentPolicy::CountMatch { k: 2 });
    }

    #[test]
    fn seed_defaults_to_zero() {
        let s = Scenario::from_json(r#"{"intent": "x", "run": {"horizon_hours": 24}}"#).unwrap();
        assert_eq!(s.run.seed, 0);
        assert!(Scenario::from_json(r#"{"intent": "x", "run": {"horizon_hours": 0}}"#).is_err());
    }
}
