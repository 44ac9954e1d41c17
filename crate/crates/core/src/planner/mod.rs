//! Intent understanding and progressive policy generation.
//!
//! Two engines implement [`Planner`]: a deterministic rule engine that
//! follows a fixed phase script parameterized by execution feedback, and
//! an adapter that asks a chat-completion service for one policy at a
//! time. Both see the same [`PlannerContext`].

mod action;
mod intent;
pub mod llm;
mod rules;
mod validate;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::health::ServiceHealthSnapshot;
use crate::kpi::KpiVector;
use crate::policy::{ExecutionFeedback, Label, Phase, Policy, PolicyClass, PolicyTree};

pub use action::{
    evaluate_actions, select_action, subservice_drift, ActionCandidate, ActionSpec, SubServiceDrift, Sufficiency,
};
pub use intent::{classify_intent, extract_kpis, formalize_intent, FormalIntent, IntentType, KPI_AVAILABILITY};
pub use rules::RulePlanner;
pub use validate::{validate_tree, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("could not formalize intent: {raw}")]
    Formalization { raw: String },
    #[error("intent does not match any known type: {0}")]
    UnknownType(String),
    #[error("{label} failed after retry: {feedback}")]
    Aborted { label: Label, feedback: String },
    #[error("no usable policy after {attempts} attempts: {last_error}")]
    Generation {
        attempts: u32,
        last_error: String,
        raw: String,
    },
    #[error("no sufficient corrective action among {0:?}")]
    Escalation(Vec<String>),
    #[error("planner context is missing {0}")]
    MissingContext(&'static str),
    #[error(transparent)]
    Llm(#[from] llm::LlmError),
}

/// What the assurance engine hands to the planner once drift is found:
/// the target and operational data plus the corrective action chosen for
/// the faulty sub-service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssuranceBrief {
    pub service: String,
    pub app: String,
    pub zone: String,
    pub resource: String,
    pub action: String,
    pub target_availability: f64,
    pub target_health_pct: f64,
    pub operational: ServiceHealthSnapshot,
    pub candidates: Vec<ActionCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub intent: String,
    pub formal: FormalIntent,
    pub intent_type: IntentType,
    pub targets: KpiVector,
    pub phase: Phase,
    pub history: Vec<(Policy, ExecutionFeedback)>,
    #[serde(default)]
    pub brief: Option<AssuranceBrief>,
}

impl PlannerContext {
    pub fn new(intent: &str, formal: FormalIntent, intent_type: IntentType, targets: KpiVector, phase: Phase) -> Self {
        Self {
            intent: intent.to_string(),
            formal,
            intent_type,
            targets,
            phase,
            history: Vec::new(),
            brief: None,
        }
    }

    pub fn record(&mut self, policy: Policy, feedback: ExecutionFeedback) {
        self.history.push((policy, feedback));
    }

    /// Next free label of `class`.
    pub fn next_label(&self, class: PolicyClass) -> Label {
        let used = self
            .history
            .iter()
            .filter(|(p, _)| p.label.class == class)
            .map(|(p, _)| p.label.index)
            .max();
        Label::new(class, used.unwrap_or(0) + 1)
    }

    pub fn tree(&self) -> PolicyTree {
        PolicyTree::from_policies(self.phase, self.history.iter().map(|(p, _)| p.clone()))
            .unwrap_or_else(|_| PolicyTree::new(self.phase))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    Rules,
    Llm,
    Replay,
}

impl std::str::FromStr for PlannerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rules" => Ok(PlannerMode::Rules),
            "llm" => Ok(PlannerMode::Llm),
            "replay" => Ok(PlannerMode::Replay),
            other => Err(format!(
                "unknown planner mode `{other}` (expected rules, llm or replay)"
            )),
        }
    }
}

pub trait Planner {
    fn formalize(&mut self, text: &str) -> Result<FormalIntent, PlannerError>;

    fn classify(&mut self, text: &str) -> Result<IntentType, PlannerError>;

    /// The next policy to execute, or `None` once the phase is complete.
    fn next_policy(&mut self, ctx: &PlannerContext) -> Result<Option<Policy>, PlannerError>;

    fn review(
        &mut self,
        tree: &PolicyTree,
        formal: &FormalIntent,
        intent_type: IntentType,
    ) -> Result<ValidationReport, PlannerError> {
        Ok(validate_tree(tree, formal, intent_type))
    }

    /// Wall-clock time spent waiting on an external service.
    fn adapter_latency(&self) -> Duration {
        Duration::ZERO
    }
}

/// Shared failure rule: an execute-class policy that failed is retried
/// once under a fresh label; anything else aborts planning.
pub(crate) fn retry_or_abort(ctx: &PlannerContext) -> Option<Result<Policy, PlannerError>> {
    let (last, fb) = ctx.history.last()?;
    if fb.success {
        return None;
    }
    let attempts = ctx
        .history
        .iter()
        .filter(|(p, f)| !f.success && p.verb == last.verb && p.subject == last.subject && p.params == last.params)
        .count();
    if last.label.class == PolicyClass::Execute && attempts < 2 {
        return Some(Ok(last.clone().relabel(ctx.next_label(PolicyClass::Execute))));
    }
    Some(Err(PlannerError::Aborted {
        label: last.label,
        feedback: crate::policy::render_feedback(fb),
    }))
}
