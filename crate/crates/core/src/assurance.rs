//! The closed control loop: fulfil the intent, monitor it at the
//! healthcheck cadence, and correct drift with penalty-ranked actions.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::availability::{availability_from, intent_health, max_downtime, service_availability};
use crate::drift::{drift_report, DriftError, DriftReport, TargetSpec};
use crate::health::ServiceHealthSnapshot;
use crate::kpi::{BandSet, KpiError, KpiVector, Level3, QuantBands, Unit};
use crate::planner::{
    evaluate_actions, extract_kpis, select_action, subservice_drift, ActionCandidate, ActionSpec, AssuranceBrief,
    FormalIntent, IntentType, Planner, PlannerContext, PlannerError, SubServiceDrift, ValidationReport,
    KPI_AVAILABILITY,
};
use crate::policy::{render_feedback, ExecutionFeedback, Phase, Policy, Verb};
use crate::testbed::{FaultEvent, SimEvent, Testbed, TestbedError};

/// Composite service health, percent.
pub const K_HS: &str = "k_hs";
/// Service availability, fraction.
pub const K_AS: &str = "k_as";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("illegal phase transition {from} -> {to}")]
    IllegalTransition { from: LoopPhase, to: LoopPhase },
    #[error(transparent)]
    Testbed(#[from] TestbedError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopPhase {
    Fulfilling,
    Steady,
    DriftDetected,
    Correcting,
    Assured,
    Failed,
}

impl LoopPhase {
    /// The loop's state machine. `assured` closes a run that ends steady.
    pub fn can_move_to(self, to: LoopPhase) -> bool {
        use LoopPhase::*;
        matches!(
            (self, to),
            (Fulfilling, Steady)
                | (Steady, DriftDetected)
                | (DriftDetected, Correcting)
                | (Correcting, Steady)
                | (Correcting, Failed)
                | (Steady, Assured)
        ) || (to == Failed && self != Failed && self != Assured)
    }
}

impl fmt::Display for LoopPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LoopPhase::Fulfilling => "fulfilling",
            LoopPhase::Steady => "steady",
            LoopPhase::DriftDetected => "drift_detected",
            LoopPhase::Correcting => "correcting",
            LoopPhase::Assured => "assured",
            LoopPhase::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub at: u64,
    pub from: LoopPhase,
    pub to: LoopPhase,
    pub reason: String,
}

/// Target data registered after fulfillment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub kpis: KpiVector,
    pub spec: TargetSpec,
    pub availability: Option<f64>,
    pub health_pct: f64,
    /// Every sub-service, and each of its resource, software and agent
    /// components, is expected at level 1.
    pub subservice_level: Level3,
}

impl Targets {
    pub fn from_kpis(kpis: KpiVector) -> Result<Self, DriftError> {
        let availability = kpis.value(KPI_AVAILABILITY);
        let mut spec = TargetSpec::new().point(K_HS, 100.0)?;
        if let Some(a) = availability {
            spec = spec.band(K_AS, a, 1.0)?;
        }
        Ok(Self {
            kpis,
            spec,
            availability,
            health_pct: 100.0,
            subservice_level: Level3::Normal,
        })
    }

    fn bands(&self) -> Result<BandSet, KpiError> {
        let mut b = BandSet::new().with(K_HS, QuantBands::binary_status());
        if let Some(a) = self.availability {
            b.insert(K_AS, QuantBands::at_least(a, 0.0, 1.0)?);
        }
        Ok(b)
    }

    /// Service-level drift: health against 100 %, availability against the
    /// band `[target, 1]`.
    pub fn service_drift(&self, k_hs_pct: f64, k_as: f64) -> Result<DriftReport, LoopError> {
        let mut op = KpiVector::operational().with(K_HS, k_hs_pct, Unit::Percent)?;
        if self.availability.is_some() {
            op = op.with(K_AS, k_as, Unit::Fraction)?;
        }
        Ok(drift_report(&op, &self.spec, &self.bands()?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub phase: LoopPhase,
    pub targets: Option<Targets>,
    pub last_drift: Option<DriftReport>,
    pub cycles: u32,
    pub transitions: Vec<PhaseTransition>,
}

impl Default for LoopState {
    fn default() -> Self {
        Self {
            phase: LoopPhase::Fulfilling,
            targets: None,
            last_drift: None,
            cycles: 0,
            transitions: Vec::new(),
        }
    }
}

impl LoopState {
    pub fn transition(&mut self, at: u64, to: LoopPhase, reason: impl Into<String>) -> Result<(), LoopError> {
        if !self.phase.can_move_to(to) {
            return Err(LoopError::IllegalTransition { from: self.phase, to });
        }
        self.transitions.push(PhaseTransition {
            at,
            from: self.phase,
            to,
            reason: reason.into(),
        });
        self.phase = to;
        Ok(())
    }
}

/// One executed policy with its feedback and simulated timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policy: Policy,
    pub text: String,
    pub feedback: ExecutionFeedback,
    pub feedback_text: String,
    pub sim_time: u64,
    pub duration: u64,
    /// Index into the drift trace of the report that caused this policy.
    pub trigger: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Scheduled,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub at: u64,
    pub kind: CheckKind,
    pub k_hs_pct: f64,
    pub k_as: f64,
    pub report: DriftReport,
    pub snapshot: ServiceHealthSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionAttempt {
    pub action: String,
    pub policies: Vec<PolicyRecord>,
    pub succeeded: bool,
    pub note: String,
}

/// Everything done in response to one detected drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub trigger: usize,
    pub subservice: SubServiceDrift,
    /// Drift of every sub-service at detection, worst first excluded.
    pub analysis: Vec<SubServiceDrift>,
    pub candidates: Vec<ActionCandidate>,
    pub attempts: Vec<CorrectionAttempt>,
    pub verification: Option<usize>,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiObservation {
    pub at: u64,
    pub health_pct: f64,
    pub availability: f64,
    pub health_gradient: f64,
    pub availability_gradient: f64,
}

impl KpiObservation {
    fn from_entry(e: &DriftEntry) -> Self {
        let g = |k: &str| e.report.scaled_gradient.get(k).map_or(0.0, |c| c.display);
        Self {
            at: e.at,
            health_pct: e.k_hs_pct,
            availability: e.k_as,
            health_gradient: g(K_HS),
            availability_gradient: g(K_AS),
        }
    }
}

/// Target vs first detected drift (t1) vs the verified repair (t2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSummary {
    pub target_health_pct: f64,
    pub target_availability: Option<f64>,
    pub t1: Option<KpiObservation>,
    pub t2: Option<KpiObservation>,
    /// Simulated time the repaired resource spent in corrective actions.
    pub t_down: u64,
    pub final_health_pct: Option<f64>,
    pub final_availability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub fulfillment_policies: usize,
    pub assurance_policies: usize,
    pub fulfillment_testbed_s: u64,
    pub assurance_testbed_s: u64,
    pub total_testbed_s: u64,
    /// Wall-clock adapter latency, present only for a live model.
    pub fulfillment_planner_s: Option<f64>,
    pub assurance_planner_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub seed: u64,
    pub planner: String,
    pub intent: String,
    pub formal: Option<FormalIntent>,
    pub intent_type: Option<IntentType>,
    pub targets: Option<Targets>,
    pub warnings: Vec<String>,
    pub fulfillment: Vec<PolicyRecord>,
    pub validation: Option<ValidationReport>,
    pub corrections: Vec<Correction>,
    pub drift_trace: Vec<DriftEntry>,
    pub kpis: KpiSummary,
    pub timings: TimingSummary,
    pub transitions: Vec<PhaseTransition>,
    pub final_phase: LoopPhase,
    pub probes: u64,
    pub unhealthy_probes: u64,
    pub healthchecks: u64,
    pub horizon_s: u64,
    pub service_downtime_s: u64,
    pub availability: f64,
    pub downtime_budget_s: Option<f64>,
    pub intent_health: u8,
    pub failure: Option<String>,
}

impl ScenarioResult {
    pub fn assurance_policies(&self) -> impl Iterator<Item = &PolicyRecord> {
        self.corrections
            .iter()
            .flat_map(|c| c.attempts.iter().flat_map(|a| a.policies.iter()))
    }

    pub fn assurance_count(&self) -> usize {
        self.assurance_policies().count()
    }

    /// Every phase change obeys the loop's state machine.
    pub fn transitions_legal(&self) -> bool {
        let mut phase = LoopPhase::Fulfilling;
        self.transitions.iter().all(|t| {
            let ok = t.from == phase && phase.can_move_to(t.to);
            phase = t.to;
            ok
        }) && phase == self.final_phase
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Monitoring horizon after fulfillment, seconds.
    pub horizon: u64,
    pub actions: Vec<ActionSpec>,
    /// Faults with `at` counted from the end of fulfillment.
    pub faults: Vec<FaultEvent>,
    /// Upper bound on policies per phase; guards a planner that never ends.
    pub max_policies: usize,
    pub record_latency: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            horizon: 720 * 3600,
            actions: ActionSpec::default_registry(),
            faults: Vec::new(),
            max_policies: 64,
            record_latency: false,
        }
    }
}

/// Drives one intent against one testbed. The loop is the only writer of
/// the testbed for its whole lifetime.
pub struct ClosedLoop<'p> {
    planner: &'p mut dyn Planner,
    testbed: Testbed,
    config: LoopConfig,
    state: LoopState,
    ctx: Option<PlannerContext>,
    result: ScenarioResult,
    repair_downtime: u64,
    latency_mark: Duration,
}

impl<'p> ClosedLoop<'p> {
    pub fn new(planner: &'p mut dyn Planner, testbed: Testbed, config: LoopConfig) -> Self {
        let seed = testbed.config().seed;
        Self {
            planner,
            result: ScenarioResult {
                scenario: String::new(),
                seed,
                planner: String::new(),
                intent: String::new(),
                formal: None,
                intent_type: None,
                targets: None,
                warnings: Vec::new(),
                fulfillment: Vec::new(),
                validation: None,
                corrections: Vec::new(),
                drift_trace: Vec::new(),
                kpis: KpiSummary {
                    target_health_pct: 100.0,
                    target_availability: None,
                    t1: None,
                    t2: None,
                    t_down: 0,
                    final_health_pct: None,
                    final_availability: 1.0,
                },
                timings: TimingSummary {
                    fulfillment_policies: 0,
                    assurance_policies: 0,
                    fulfillment_testbed_s: 0,
                    assurance_testbed_s: 0,
                    total_testbed_s: 0,
                    fulfillment_planner_s: None,
                    assurance_planner_s: None,
                },
                transitions: Vec::new(),
                final_phase: LoopPhase::Fulfilling,
                probes: 0,
                unhealthy_probes: 0,
                healthchecks: 0,
                horizon_s: config.horizon,
                service_downtime_s: 0,
                availability: 1.0,
                downtime_budget_s: None,
                intent_health: 0,
                failure: None,
            },
            testbed,
            config,
            state: LoopState::default(),
            ctx: None,
            repair_downtime: 0,
            latency_mark: Duration::ZERO,
        }
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn testbed(&self) -> &Testbed {
        &self.testbed
    }

    fn fail(&mut self, why: String) -> Result<(), LoopError> {
        let at = self.testbed.now();
        self.state.transition(at, LoopPhase::Failed, why.clone())?;
        self.result.failure = Some(why);
        Ok(())
    }

    fn take_latency(&mut self) -> Option<f64> {
        let total = self.planner.adapter_latency();
        let spent = total.saturating_sub(self.latency_mark);
        self.latency_mark = total;
        self.config.record_latency.then_some(spent.as_secs_f64())
    }

    /// Formalizes and classifies the intent, then executes the fulfillment
    /// tree policy by policy. Ends in `steady` or `failed`.
    pub fn run_fulfillment(&mut self, intent: &str) -> Result<(), LoopError> {
        self.result.intent = intent.to_string();
        let planned = self
            .planner
            .formalize(intent)
            .and_then(|f| Ok((self.planner.classify(intent)?, f)));
        let (intent_type, formal) = match planned {
            Ok(v) => v,
            Err(e) => return self.fail(format!("intent understanding: {e}")),
        };
        let (kpis, warnings) = extract_kpis(&formal);
        self.result.warnings = warnings;
        self.result.formal = Some(formal.clone());
        self.result.intent_type = Some(intent_type);
        let mut ctx = PlannerContext::new(intent, formal.clone(), intent_type, kpis.clone(), Phase::Fulfillment);

        loop {
            if ctx.history.len() >= self.config.max_policies {
                self.ctx = Some(ctx);
                return self.fail("fulfillment planner did not finish".into());
            }
            let next = match self.planner.next_policy(&ctx) {
                Ok(Some(p)) => p,
                Ok(None) => break,
                Err(e) => {
                    self.ctx = Some(ctx);
                    self.result.timings.fulfillment_planner_s = self.take_latency();
                    return self.fail(format!("fulfillment: {e}"));
                }
            };
            let record = self.execute(&next, &ctx.history, None);
            ctx.record(next, record.feedback.clone());
            self.result.fulfillment.push(record);
        }
        self.result.timings.fulfillment_planner_s = self.take_latency();

        let report = match self.planner.review(&ctx.tree(), &formal, intent_type) {
            Ok(r) => r,
            Err(e) => {
                self.ctx = Some(ctx);
                return self.fail(format!("validation: {e}"));
            }
        };
        let valid = report.is_valid();
        let summary: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        self.result.validation = Some(report);
        self.ctx = Some(ctx);
        if !valid {
            return self.fail(format!("policy tree rejected: {}", summary.join("; ")));
        }

        let targets = Targets::from_kpis(kpis)?;
        self.result.kpis.target_availability = targets.availability;
        self.result.targets = Some(targets.clone());
        self.state.targets = Some(targets);
        let at = self.testbed.now();
        self.state.transition(at, LoopPhase::Steady, "fulfillment complete")
    }

    fn execute(
        &mut self,
        policy: &Policy,
        history: &[(Policy, ExecutionFeedback)],
        trigger: Option<usize>,
    ) -> PolicyRecord {
        let out = self.testbed.dispatch(policy, history);
        self.absorb(&out.events);
        PolicyRecord {
            text: policy.to_string(),
            feedback_text: render_feedback(&out.feedback),
            policy: policy.clone(),
            feedback: out.feedback,
            sim_time: out.started_at,
            duration: out.duration,
            trigger,
        }
    }

    /// Bookkeeping for events fired while time advanced.
    fn absorb(&mut self, events: &[SimEvent]) {
        for e in events {
            if let SimEvent::Healthcheck { .. } = e {
                self.result.healthchecks += 1;
            }
        }
    }

    fn operational_availability(&self) -> f64 {
        if self.testbed.tracker().probes() == 0 {
            1.0
        } else {
            service_availability(self.testbed.tracker()).unwrap_or(1.0)
        }
    }

    fn record_check(&mut self, at: u64, kind: CheckKind, snapshot: ServiceHealthSnapshot) -> Result<usize, LoopError> {
        let targets = self.state.targets.as_ref().expect("registered after fulfillment");
        let k_as = self.operational_availability();
        let report = targets.service_drift(snapshot.k_hs_pct, k_as)?;
        self.state.last_drift = Some(report.clone());
        self.result.drift_trace.push(DriftEntry {
            at,
            kind,
            k_hs_pct: snapshot.k_hs_pct,
            k_as,
            report,
            snapshot,
        });
        Ok(self.result.drift_trace.len() - 1)
    }

    /// One monitoring cycle on a fresh healthcheck snapshot: compute the
    /// drift and, if there is any, correct it and re-verify.
    pub fn run_assurance_cycle(&mut self, at: u64, snapshot: ServiceHealthSnapshot) -> Result<(), LoopError> {
        if self.state.phase != LoopPhase::Steady {
            return Ok(());
        }
        self.state.cycles += 1;
        let trigger = self.record_check(at, CheckKind::Scheduled, snapshot.clone())?;
        if self.result.drift_trace[trigger].report.is_zero_drift {
            return Ok(());
        }
        if self.result.kpis.t1.is_none() {
            self.result.kpis.t1 = Some(KpiObservation::from_entry(&self.result.drift_trace[trigger]));
        }
        self.state
            .transition(at, LoopPhase::DriftDetected, format!("drift at check #{trigger}"))?;

        let bands = self.testbed.config().bands.clone();
        let mut analysis = snapshot
            .subservices
            .iter()
            .map(|s| subservice_drift(s, &bands))
            .collect::<Result<Vec<_>, _>>()?;
        let worst = snapshot.worst().map(|w| w.name.clone()).unwrap_or_default();
        let idx = analysis.iter().position(|d| d.name == worst).unwrap_or(0);
        let target = analysis.remove(idx);
        analysis.insert(idx, target.clone());

        let mut correction = Correction {
            trigger,
            candidates: evaluate_actions(&self.config.actions, &target, &[]),
            subservice: target.clone(),
            analysis,
            attempts: Vec::new(),
            verification: None,
            resolved: false,
        };
        self.state.transition(
            self.testbed.now(),
            LoopPhase::Correcting,
            format!("correcting {}", target.name),
        )?;

        let mut failed: Vec<String> = Vec::new();
        let outcome = loop {
            let candidates = evaluate_actions(&self.config.actions, &target, &failed);
            let action = match select_action(&candidates) {
                Ok(a) => a.name.clone(),
                Err(e) => break Err(format!("{e}")),
            };
            let attempt = self.attempt(trigger, &target, &action, &candidates, &snapshot)?;
            let succeeded = attempt.succeeded;
            correction.attempts.push(attempt);
            if succeeded {
                let check = self.verify()?;
                correction.verification = Some(check);
                if self.result.drift_trace[check].report.is_zero_drift {
                    break Ok(check);
                }
                if let Some(a) = correction.attempts.last_mut() {
                    a.succeeded = false;
                    a.note = "drift persisted after correction".into();
                }
            }
            failed.push(action);
        };

        match outcome {
            Ok(check) => {
                correction.resolved = true;
                self.result.kpis.t2 = Some(KpiObservation::from_entry(&self.result.drift_trace[check]));
                self.result.corrections.push(correction);
                self.state
                    .transition(self.testbed.now(), LoopPhase::Steady, "realigned with targets")
            }
            Err(why) => {
                self.result.corrections.push(correction);
                self.fail(format!("escalation exhausted: {why}"))
            }
        }
    }

    /// Asks the planner for the corrective tree of `action` and executes it.
    fn attempt(
        &mut self,
        trigger: usize,
        target: &SubServiceDrift,
        action: &str,
        candidates: &[ActionCandidate],
        snapshot: &ServiceHealthSnapshot,
    ) -> Result<CorrectionAttempt, LoopError> {
        let base = self.ctx.as_ref().expect("fulfillment ran");
        let (service, app) = scheduled_healthcheck(&base.history).unwrap_or_default();
        let zone = base.formal.domain().unwrap_or_default().to_string();
        let targets = self.state.targets.as_ref().expect("registered");
        let mut ctx = PlannerContext::new(
            &base.intent,
            base.formal.clone(),
            base.intent_type,
            base.targets.clone(),
            Phase::Assurance,
        );
        ctx.brief = Some(AssuranceBrief {
            service,
            app,
            zone,
            resource: target.name.clone(),
            action: action.to_string(),
            target_availability: targets.availability.unwrap_or(1.0),
            target_health_pct: targets.health_pct,
            operational: snapshot.clone(),
            candidates: candidates.to_vec(),
        });

        let mut policies = Vec::new();
        let note = loop {
            if ctx.history.len() >= self.config.max_policies {
                break Some("assurance planner did not finish".to_string());
            }
            match self.planner.next_policy(&ctx) {
                Ok(Some(p)) => {
                    let record = self.execute(&p, &ctx.history, Some(trigger));
                    if matches!(p.verb, Verb::Restart | Verb::Recreate) {
                        self.repair_downtime += record.duration;
                    }
                    ctx.record(p, record.feedback.clone());
                    policies.push(record);
                }
                Ok(None) => break None,
                Err(e @ PlannerError::Aborted { .. }) => break Some(e.to_string()),
                Err(e) => break Some(format!("planner: {e}")),
            }
        };
        let latency = self.take_latency();
        if let Some(l) = latency {
            *self.result.timings.assurance_planner_s.get_or_insert(0.0) += l;
        }
        Ok(CorrectionAttempt {
            action: action.to_string(),
            policies,
            succeeded: note.is_none(),
            note: note.unwrap_or_default(),
        })
    }

    /// Immediate extra healthcheck after a correction.
    fn verify(&mut self) -> Result<usize, LoopError> {
        let service = self
            .testbed
            .state()
            .monitored
            .clone()
            .ok_or_else(|| TestbedError::UnknownService("<unmonitored>".into()))?;
        let snapshot = self.testbed.evaluate_service(&service)?;
        self.result.healthchecks += 1;
        let at = self.testbed.now();
        self.record_check(at, CheckKind::Verification, snapshot)
    }

    /// Monitors for the configured horizon, running an assurance cycle at
    /// every scheduled healthcheck.
    pub fn run_monitoring(&mut self) -> Result<(), LoopError> {
        if self.state.phase != LoopPhase::Steady {
            return Ok(());
        }
        let start = self.testbed.now();
        let end = start + self.config.horizon;
        for f in self.config.faults.clone() {
            self.testbed.schedule_fault(FaultEvent { at: start + f.at, ..f });
        }
        while self.testbed.now() < end && self.state.phase != LoopPhase::Failed {
            let events = self.testbed.advance_to_healthcheck(end)?;
            self.absorb(&events);
            if let Some(SimEvent::Healthcheck { at, snapshot, .. }) = events.last() {
                self.run_assurance_cycle(*at, snapshot.clone())?;
            }
        }
        if self.state.phase == LoopPhase::Steady {
            let at = self.testbed.now();
            self.state
                .transition(at, LoopPhase::Assured, "horizon reached without open drift")?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> ScenarioResult {
        let r = &mut self.result;
        let tracker = self.testbed.tracker();
        r.probes = tracker.probes();
        r.unhealthy_probes = tracker.unhealthy_probes();
        r.service_downtime_s = tracker.t_down().as_secs();
        r.availability = if tracker.probes() == 0 {
            1.0
        } else {
            service_availability(tracker).unwrap_or(1.0)
        };
        r.kpis.t_down = self.repair_downtime;
        r.kpis.final_availability = r.availability;
        r.kpis.final_health_pct = r.drift_trace.last().map(|e| e.k_hs_pct);
        let target = r.kpis.target_availability;
        r.downtime_budget_s = target.and_then(|t| {
            max_downtime(t, Duration::from_secs(r.horizon_s.max(1)))
                .ok()
                .map(|d| d.as_secs_f64())
        });
        r.intent_health = match (target, r.final_phase_ok(self.state.phase)) {
            (_, false) => 0,
            (Some(t), true) => intent_health(r.availability, t),
            (None, true) => 1,
        };
        let (count, secs) = r.assurance_policies().fold((0, 0), |(n, s), p| (n + 1, s + p.duration));
        r.timings.assurance_policies = count;
        r.timings.assurance_testbed_s = secs;
        r.timings.fulfillment_policies = r.fulfillment.len();
        r.timings.fulfillment_testbed_s = r.fulfillment.iter().map(|p| p.duration).sum();
        r.timings.total_testbed_s = r.timings.fulfillment_testbed_s + r.timings.assurance_testbed_s;
        r.transitions = self.state.transitions.clone();
        r.final_phase = self.state.phase;
        self.result
    }
}

impl ScenarioResult {
    fn final_phase_ok(&self, phase: LoopPhase) -> bool {
        phase != LoopPhase::Failed && phase != LoopPhase::Fulfilling
    }

    /// Availability implied by the repair downtime over the horizon.
    pub fn repair_availability(&self) -> Option<f64> {
        availability_from(
            Duration::from_secs(self.horizon_s),
            Duration::from_secs(self.kpis.t_down),
        )
        .ok()
    }
}

/// `(service, output app)` of the scheduled healthcheck in a fulfillment
/// history.
fn scheduled_healthcheck(history: &[(Policy, ExecutionFeedback)]) -> Option<(String, String)> {
    let (hc, _) = history.iter().find(|(p, f)| p.verb == Verb::Healthcheck && f.success)?;
    Some((
        hc.subject.as_scalar()?.to_string(),
        hc.get_str("output").unwrap_or("App_1").to_string(),
    ))
}

/// Runs fulfillment then monitoring and returns the full record.
pub fn run_closed_loop(
    intent: &str,
    planner: &mut dyn Planner,
    testbed: Testbed,
    config: LoopConfig,
) -> Result<ScenarioResult, LoopError> {
    let mut lp = ClosedLoop::new(planner, testbed, config);
    lp.run_fulfillment(intent)?;
    lp.run_monitoring()?;
    Ok(lp.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use LoopPhase::*;

    #[test]
    fn transitions() {
        assert!(Fulfilling.can_move_to(Steady));
        assert!(Steady.can_move_to(DriftDetected));
        assert!(DriftDetected.can_move_to(Correcting));
        assert!(Correcting.can_move_to(Steady));
        assert!(Correcting.can_move_to(Failed));
        assert!(Steady.can_move_to(Failed));
        assert!(Steady.can_move_to(Assured));
        assert!(!Steady.can_move_to(Correcting));
        assert!(!Fulfilling.can_move_to(DriftDetected));
        assert!(!Failed.can_move_to(Failed));
        assert!(!Assured.can_move_to(Steady));
        let mut s = LoopState::default();
        assert!(s.transition(0, Correcting, "x").is_err());
    }

    #[test]
    fn service_drift_signs() {
        let t = Targets::from_kpis(
            KpiVector::target()
                .with(KPI_AVAILABILITY, 0.9999, Unit::Fraction)
                .unwrap(),
        )
        .unwrap();
        let r = t.service_drift(50.0, 0.9999).unwrap();
        assert!(!r.is_zero_drift);
        assert_eq!(r.scaled_gradient.get(K_HS).unwrap().display, -1.0);
        assert_eq!(r.scaled_gradient.get(K_AS).unwrap().display, 0.0);
        assert!(t.service_drift(100.0, 1.0).unwrap().is_zero_drift);
        let r = t.service_drift(100.0, 0.999).unwrap();
        assert!(!r.is_zero_drift);
    }
}
