//! Penalty-ranked choice of a corrective action for a drifting sub-service.

use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::drift::{level_drift_report, level_gradient, level_report_from, DriftError, DriftReport, LevelEntry};
use crate::health::{ResourceBands, SubServiceHealth, S_R};
use crate::kpi::Level3;

/// Level-domain drift of one sub-service: the per-metric report of its
/// resource, and the report over `(h_r, h_sw, h_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubServiceDrift {
    pub name: String,
    pub resource: DriftReport,
    pub subservice: DriftReport,
    pub combined: Level3,
    /// `2·δ` of the combined level against the healthy target.
    pub gradient: f64,
}

impl SubServiceDrift {
    pub fn resource_status_failed(&self) -> bool {
        self.resource.level(S_R) == Some(Level3::Critical)
    }

    pub fn resource_failed(&self) -> bool {
        self.subservice.level("h_r") == Some(Level3::Critical)
    }
}

pub fn subservice_drift(sub: &SubServiceHealth, bands: &ResourceBands) -> Result<SubServiceDrift, DriftError> {
    let resource = level_drift_report(&sub.metrics.to_kpis()?, &bands.band_set())?;
    let subservice = level_report_from(vec![
        LevelEntry {
            kpi: "h_r".into(),
            level: sub.resource,
        },
        LevelEntry {
            kpi: "h_sw".into(),
            level: sub.software,
        },
        LevelEntry {
            kpi: "h_a".into(),
            level: sub.agents,
        },
    ]);
    Ok(SubServiceDrift {
        name: sub.name.clone(),
        resource,
        subservice,
        combined: sub.combined,
        gradient: level_gradient(sub.combined, Level3::Normal),
    })
}

/// When an action can be expected to repair the sub-service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sufficiency {
    Always,
    /// The resource status metric is critical (the VM is down).
    ResourceStatusFailure,
    /// The quantized resource health is critical.
    ResourceFailure,
    Never,
}

impl Sufficiency {
    pub fn holds(self, drift: &SubServiceDrift) -> bool {
        match self {
            Sufficiency::Always => true,
            Sufficiency::ResourceStatusFailure => drift.resource_status_failed(),
            Sufficiency::ResourceFailure => drift.resource_failed(),
            Sufficiency::Never => false,
        }
    }
}

/// Registry entry for a corrective action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub weight: f64,
    /// Simulated execution time, seconds.
    pub duration: u64,
    pub sufficiency: Sufficiency,
    #[serde(default = "enabled")]
    pub enabled: bool,
}

fn enabled() -> bool {
    true
}

impl ActionSpec {
    pub fn new(name: &str, weight: f64, duration: u64, sufficiency: Sufficiency) -> Self {
        Self {
            name: name.to_string(),
            weight,
            duration,
            sufficiency,
            enabled: true,
        }
    }

    /// Restart (weight 1, 90 s) then recreate (weight 2, 200 s).
    pub fn default_registry() -> Vec<ActionSpec> {
        vec![
            ActionSpec::new("restart", 1.0, 90, Sufficiency::ResourceStatusFailure),
            ActionSpec::new("recreate", 2.0, 200, Sufficiency::Always),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub name: String,
    pub weight: f64,
    /// `|∇|` of the sub-service in the level domain.
    pub magnitude: f64,
    pub penalty: f64,
    /// Simulated downtime the action costs the resource, seconds.
    pub duration: u64,
    pub sufficient: bool,
    /// Already tried and failed during this correction.
    pub excluded: bool,
}

/// Prices every enabled action against `drift`, in registry order.
pub fn evaluate_actions(registry: &[ActionSpec], drift: &SubServiceDrift, failed: &[String]) -> Vec<ActionCandidate> {
    let magnitude = drift.gradient.abs();
    registry
        .iter()
        .filter(|a| a.enabled)
        .map(|a| ActionCandidate {
            name: a.name.clone(),
            weight: a.weight,
            magnitude,
            penalty: a.weight * magnitude,
            duration: a.duration,
            sufficient: a.sufficiency.holds(drift),
            excluded: failed.contains(&a.name),
        })
        .collect()
}

/// Cheapest sufficient candidate; the earliest one wins ties.
pub fn select_action(candidates: &[ActionCandidate]) -> Result<&ActionCandidate, PlannerError> {
    candidates
        .iter()
        .filter(|c| c.sufficient && !c.excluded)
        .min_by(|a, b| a.penalty.total_cmp(&b.penalty))
        .ok_or_else(|| PlannerError::Escalation(candidates.iter().map(|c| c.name.clone()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::health::{AgentPolicy, AgentProbe, ResourceMetrics};

    fn dead_collector() -> SubServiceDrift {
        let probes = vec![
            AgentProbe {
                link: false,
                ..AgentProbe::healthy()
            };
            3
        ];
        let sub = SubServiceHealth::evaluate(
            "collector_2",
            ResourceMetrics::dead(),
            false,
            probes,
            &ResourceBands::default(),
            &AgentPolicy::Strict,
        )
        .unwrap();
        subservice_drift(&sub, &ResourceBands::default()).unwrap()
    }

    #[test]
    fn dead_collector_drift() {
        let d = dead_collector();
        assert_eq!(d.gradient, -4.0);
        assert!(d.resource.delta.values().all(|x| x == -2.0));
        assert_eq!(d.subservice.level("h_sw"), Some(Level3::Warning));
        assert!(d.resource_status_failed());
    }

    #[test]
    fn restart_beats_recreate() {
        let d = dead_collector();
        let c = evaluate_actions(&ActionSpec::default_registry(), &d, &[]);
        assert_eq!(c.iter().map(|c| c.penalty).collect::<Vec<_>>(), vec![4.0, 8.0]);
        assert_eq!(select_action(&c).unwrap().name, "restart");
        let c = evaluate_actions(&ActionSpec::default_registry(), &d, &["restart".into()]);
        assert_eq!(select_action(&c).unwrap().name, "recreate");
        let c = evaluate_actions(
            &ActionSpec::default_registry(),
            &d,
            &["restart".into(), "recreate".into()],
        );
        assert!(matches!(select_action(&c), Err(PlannerError::Escalation(_))));
    }

    #[test]
    fn ties_go_to_registry_order() {
        let d = dead_collector();
        let reg = vec![
            ActionSpec::new("a", 1.0, 1, Sufficiency::Always),
            ActionSpec::new("b", 1.0, 1, Sufficiency::Always),
        ];
        assert_eq!(select_action(&evaluate_actions(&reg, &d, &[])).unwrap().name, "a");
    }
}
