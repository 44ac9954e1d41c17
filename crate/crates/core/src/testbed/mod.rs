//! Deterministic simulated infrastructure: zones, VM inventory, services,
//! monitored agents, a simulated clock and fault injection.
//!
//! All mutation goes through [`Testbed`]; time only moves forward, either
//! explicitly via [`Testbed::advance_clock`] or as a side effect of
//! dispatching a policy (each verb takes a configured simulated duration).

mod dispatch;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::time::Duration;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::availability::{AvailabilityError, AvailabilityTracker};
use crate::health::{
    AgentPolicy, AgentProbe, HealthError, ResourceBands, ResourceMetrics, ServiceHealthSnapshot, SubServiceHealth,
};
use crate::kpi::Level3;
use crate::policy::{ExecutionFeedback, Label, Policy};

pub use dispatch::DispatchOutcome;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestbedError {
    #[error("unknown zone `{0}`")]
    UnknownZone(String),
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("clock can only advance by a positive duration")]
    NonPositiveAdvance,
    #[error("invalid testbed configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Health(#[from] HealthError),
    #[error(transparent)]
    Availability(#[from] AvailabilityError),
}

/// A monitored device in a zone (the collectors gather data from these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub name: String,
    #[serde(default = "normal")]
    pub resource: Level3,
    #[serde(default = "yes")]
    pub software: bool,
}

fn normal() -> Level3 {
    Level3::Normal
}

fn yes() -> bool {
    true
}

impl AgentConfig {
    pub fn healthy(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            resource: Level3::Normal,
            software: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoneConfig {
    pub name: String,
    pub base_availability: f64,
    pub switches: Vec<String>,
    pub inventory: IndexMap<String, u32>,
    pub first_ip: Ipv4Addr,
    /// Empty means one healthy agent per switch.
    pub agents: Vec<AgentConfig>,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self::west()
    }
}

impl ZoneConfig {
    pub fn west() -> Self {
        Self {
            name: "West".into(),
            base_availability: 0.999,
            switches: vec!["sw_1".into(), "sw_2".into(), "sw_3".into()],
            inventory: [("small", 50), ("medium", 20), ("large", 15)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            first_ip: Ipv4Addr::new(10, 0, 0, 10),
            agents: Vec::new(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    fn roster(&self) -> Vec<AgentConfig> {
        if self.agents.is_empty() {
            self.switches.iter().map(AgentConfig::healthy).collect()
        } else {
            self.agents.clone()
        }
    }
}

/// Simulated duration of each verb, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timings {
    pub restart: u64,
    pub recreate: u64,
    pub create: u64,
    pub validate: u64,
    pub deploy: u64,
    pub configure: u64,
    pub start: u64,
    pub healthcheck: u64,
    /// Queries and bookkeeping verbs.
    pub query: u64,
}

impl Default for Timings {
    fn default() -> Self {
        Self {
            restart: 90,
            recreate: 200,
            create: 120,
            validate: 10,
            deploy: 60,
            configure: 30,
            start: 20,
            healthcheck: 5,
            query: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    pub zones: Vec<ZoneConfig>,
    pub timings: Timings,
    pub probe_period: u64,
    pub bands: ResourceBands,
    pub agent_policy: AgentPolicy,
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            zones: vec![ZoneConfig::west()],
            timings: Timings::default(),
            probe_period: 60,
            bands: ResourceBands::default(),
            agent_policy: AgentPolicy::Strict,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaultKind {
    /// Power loss: every metric and status drops to zero.
    Shutdown,
    Degrade {
        metric: String,
        value: f64,
    },
    /// Collector-to-agent links go down; `agent: None` means all of them.
    LinkDown {
        #[serde(default)]
        agent: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at: u64,
    pub target: String,
    #[serde(flatten)]
    pub kind: FaultKind,
    /// A persistent fault survives a restart; only recreate clears it.
    #[serde(default)]
    pub persistent: bool,
}

impl FaultEvent {
    pub fn shutdown(at: u64, target: &str) -> Self {
        Self {
            at,
            target: target.to_string(),
            kind: FaultKind::Shutdown,
            persistent: false,
        }
    }

    pub fn persistent(mut self) -> Self {
        self.persistent = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmStatus {
    Active,
    Booting,
    Down,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VmFaults {
    pub degraded: IndexMap<String, f64>,
    pub all_links_down: bool,
    pub links_down: BTreeSet<String>,
    pub persistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vm {
    pub name: String,
    pub zone: String,
    pub ip: Ipv4Addr,
    pub size: String,
    pub image: String,
    pub status: VmStatus,
    pub validated: bool,
    pub created_at: u64,
    pub faults: VmFaults,
}

impl Vm {
    pub fn is_active(&self) -> bool {
        self.status == VmStatus::Active
    }

    fn link_up(&self, agent: &str) -> bool {
        self.is_active() && !self.faults.all_links_down && !self.faults.links_down.contains(agent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceStatus {
    Deployed,
    Configured,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Service {
    pub name: String,
    pub kind: String,
    pub service_type: String,
    pub zone: String,
    pub members: Vec<String>,
    pub sources: Vec<String>,
    pub status: ServiceStatus,
    /// Members whose service process is running.
    pub running: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: String,
    pub base_availability: f64,
    pub switches: Vec<String>,
    pub inventory: IndexMap<String, u32>,
    pub agents: Vec<AgentConfig>,
    next_ip: u32,
    /// Availability target recorded by a compliance policy.
    pub target_availability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub label: Label,
    pub policy: Policy,
    pub period: u64,
    pub next_at: u64,
}

/// Stored output of a healthcheck, addressable by later `get` policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppOutput {
    pub name: String,
    pub service: String,
    pub at: u64,
    pub snapshot: ServiceHealthSnapshot,
}

/// Everything observable about the simulated infrastructure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedState {
    pub clock: u64,
    pub zones: IndexMap<String, Zone>,
    pub vms: IndexMap<String, Vm>,
    pub services: IndexMap<String, Service>,
    pub apps: IndexMap<String, AppOutput>,
    pub schedules: Vec<Schedule>,
    pub monitored: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SimEvent {
    Fault {
        at: u64,
        fault: FaultEvent,
        applied: bool,
    },
    Probe {
        at: u64,
        healthy: bool,
    },
    Healthcheck {
        at: u64,
        schedule: Label,
        snapshot: ServiceHealthSnapshot,
    },
}

/// One dispatched policy, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub policy: Policy,
    pub feedback: ExecutionFeedback,
    pub sim_time: u64,
    pub duration: u64,
}

#[derive(Debug, Clone)]
pub struct Testbed {
    config: TestbedConfig,
    state: TestbedState,
    rng: ChaCha8Rng,
    pending_faults: Vec<FaultEvent>,
    next_probe: Option<u64>,
    tracker: AvailabilityTracker,
    trace: Vec<TraceRecord>,
}

impl Testbed {
    pub fn new(config: TestbedConfig) -> Result<Self, TestbedError> {
        let mut zones = IndexMap::new();
        for z in &config.zones {
            if !(z.base_availability > 0.0 && z.base_availability < 1.0) {
                return Err(TestbedError::Config(format!(
                    "zone {} base availability {} outside (0, 1)",
                    z.name, z.base_availability
                )));
            }
            let zone = Zone {
                name: z.name.clone(),
                base_availability: z.base_availability,
                switches: z.switches.clone(),
                inventory: z.inventory.clone(),
                agents: z.roster(),
                next_ip: u32::from(z.first_ip),
                target_availability: None,
            };
            if zones.insert(z.name.clone(), zone).is_some() {
                return Err(TestbedError::Config(format!("zone {} defined twice", z.name)));
            }
        }
        if config.probe_period == 0 {
            return Err(TestbedError::Config("probe period must be positive".into()));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            tracker: AvailabilityTracker::new(Duration::from_secs(config.probe_period)),
            state: TestbedState {
                clock: 0,
                zones,
                vms: IndexMap::new(),
                services: IndexMap::new(),
                apps: IndexMap::new(),
                schedules: Vec::new(),
                monitored: None,
            },
            config,
            pending_faults: Vec::new(),
            next_probe: None,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &TestbedConfig {
        &self.config
    }

    pub fn state(&self) -> &TestbedState {
        &self.state
    }

    pub fn now(&self) -> u64 {
        self.state.clock
    }

    pub fn tracker(&self) -> &AvailabilityTracker {
        &self.tracker
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn vm(&self, name: &str) -> Option<&Vm> {
        self.state.vms.get(name)
    }

    pub fn service(&self, name: &str) -> Option<&Service> {
        self.state.services.get(name)
    }

    pub fn zone(&self, name: &str) -> Option<&Zone> {
        self.state.zones.get(name)
    }

    pub fn set_timings(&mut self, timings: Timings) {
        self.config.timings = timings;
    }

    /// Queues a fault; it is applied when the clock reaches `event.at`.
    pub fn schedule_fault(&mut self, event: FaultEvent) {
        let pos = self.pending_faults.partition_point(|f| f.at <= event.at);
        self.pending_faults.insert(pos, event);
    }

    pub fn pending_faults(&self) -> &[FaultEvent] {
        &self.pending_faults
    }

    /// Applies a fault now, whatever its `at` field says.
    pub fn inject_fault(&mut self, event: &FaultEvent) -> Result<(), TestbedError> {
        if let Some(vm) = self.state.vms.get_mut(&event.target) {
            vm.faults.persistent |= event.persistent;
            match &event.kind {
                FaultKind::Shutdown => {
                    vm.status = VmStatus::Down;
                    for svc in self.state.services.values_mut() {
                        svc.running.remove(&event.target);
                    }
                }
                FaultKind::Degrade { metric, value } => {
                    vm.faults.degraded.insert(metric.clone(), *value);
                }
                FaultKind::LinkDown { agent: None } => vm.faults.all_links_down = true,
                FaultKind::LinkDown { agent: Some(a) } => {
                    vm.faults.links_down.insert(a.clone());
                }
            }
            return Ok(());
        }
        for zone in self.state.zones.values_mut() {
            if let Some(agent) = zone.agents.iter_mut().find(|a| a.name == event.target) {
                match event.kind {
                    FaultKind::Shutdown => {
                        agent.resource = Level3::Critical;
                        agent.software = false;
                    }
                    FaultKind::Degrade { .. } => agent.resource = agent.resource.min(Level3::Warning),
                    FaultKind::LinkDown { .. } => agent.software = false,
                }
                return Ok(());
            }
        }
        Err(TestbedError::UnknownResource(event.target.clone()))
    }

    /// Starts 1-probe-per-period availability tracking of `service`,
    /// aligned to the probe grid.
    pub fn monitor(&mut self, service: &str) -> Result<(), TestbedError> {
        if !self.state.services.contains_key(service) {
            return Err(TestbedError::UnknownService(service.to_string()));
        }
        self.state.monitored = Some(service.to_string());
        if self.next_probe.is_none() {
            let p = self.config.probe_period;
            self.next_probe = Some((self.state.clock / p + 1) * p);
        }
        Ok(())
    }

    /// Moves the clock forward by `secs`, firing faults, probes and
    /// scheduled tasks in timestamp order (faults first on ties, then
    /// probes, then schedules).
    pub fn advance_clock(&mut self, secs: u64) -> Result<Vec<SimEvent>, TestbedError> {
        if secs == 0 {
            return Err(TestbedError::NonPositiveAdvance);
        }
        let until = self.state.clock + secs;
        self.run_until(until, false)
    }

    /// Like [`advance_clock`](Self::advance_clock) but stops right after the
    /// first scheduled healthcheck, or at `deadline`.
    pub fn advance_to_healthcheck(&mut self, deadline: u64) -> Result<Vec<SimEvent>, TestbedError> {
        self.run_until(deadline, true)
    }

    fn run_until(&mut self, until: u64, stop_at_healthcheck: bool) -> Result<Vec<SimEvent>, TestbedError> {
        let mut events = Vec::new();
        loop {
            let now = self.state.clock;
            let fault = self.pending_faults.first().map(|f| f.at.max(now));
            let probe = self.next_probe;
            let sched = self
                .state
                .schedules
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| s.next_at)
                .map(|(i, s)| (i, s.next_at));
            let next = [fault, probe, sched.map(|s| s.1)].into_iter().flatten().min();
            let t = match next {
                Some(t) if t <= until => t,
                _ => {
                    self.state.clock = self.state.clock.max(until);
                    return Ok(events);
                }
            };
            self.state.clock = t;
            if fault == Some(t) {
                let f = self.pending_faults.remove(0);
                let applied = self.inject_fault(&f).is_ok();
                events.push(SimEvent::Fault {
                    at: t,
                    fault: f,
                    applied,
                });
            } else if probe == Some(t) {
                let healthy = self.probe_healthy()?;
                self.tracker.record_probe(t, healthy)?;
                self.next_probe = Some(t + self.config.probe_period);
                events.push(SimEvent::Probe { at: t, healthy });
            } else if let Some((i, _)) = sched {
                let s = &mut self.state.schedules[i];
                s.next_at += s.period;
                let label = s.label;
                let policy = s.policy.clone();
                let snapshot = self.run_healthcheck(&policy)?;
                events.push(SimEvent::Healthcheck {
                    at: t,
                    schedule: label,
                    snapshot,
                });
                if stop_at_healthcheck {
                    return Ok(events);
                }
            }
        }
    }

    /// A probe succeeds while at least one sub-service is up (the
    /// collectors are parallel-redundant).
    fn probe_healthy(&self) -> Result<bool, TestbedError> {
        let Some(svc) = &self.state.monitored else {
            return Ok(true);
        };
        let inputs = self.member_inputs(svc)?;
        let metrics = inputs.iter().map(|m| m.nominal).collect();
        Ok(self.assemble(inputs, metrics)?.is_available())
    }

    /// Draws current resource metrics. Active VMs sit in the normal bands
    /// (cpu 40-60, ram 55-60, storage ~45-55 growing slowly); a VM that is
    /// down reads all zeros.
    pub fn sample_metrics(&mut self, name: &str) -> Result<ResourceMetrics, TestbedError> {
        let vm = self
            .state
            .vms
            .get(name)
            .ok_or_else(|| TestbedError::UnknownResource(name.to_string()))?;
        if !vm.is_active() {
            return Ok(ResourceMetrics::dead());
        }
        let hours = (self.state.clock - vm.created_at) as f64 / 3600.0;
        let degraded = vm.faults.degraded.clone();
        let cpu = self.rng.gen_range(40.0..=60.0);
        let ram = self.rng.gen_range(55.0..=60.0);
        let storage = (45.0 + hours * 0.005).min(52.0) + self.rng.gen_range(0.0..=3.0);
        Ok(apply_degrade(
            ResourceMetrics::new(cpu, ram, storage, 100.0, 100.0),
            &degraded,
        ))
    }

    /// Noise-free metrics used by availability probes, so that probing
    /// does not consume the random stream.
    fn nominal_metrics(&self, vm: &Vm) -> ResourceMetrics {
        if !vm.is_active() {
            return ResourceMetrics::dead();
        }
        apply_degrade(
            ResourceMetrics::new(50.0, 57.5, 50.0, 100.0, 100.0),
            &vm.faults.degraded,
        )
    }

    /// Samples every member of `service` and assembles its health.
    pub fn evaluate_service(&mut self, service: &str) -> Result<ServiceHealthSnapshot, TestbedError> {
        let inputs = self.member_inputs(service)?;
        let metrics = inputs
            .iter()
            .map(|m| self.sample_metrics(&m.name))
            .collect::<Result<Vec<_>, _>>()?;
        self.assemble(inputs, metrics)
    }

    fn member_inputs(&self, service: &str) -> Result<Vec<MemberInputs>, TestbedError> {
        let svc = self
            .state
            .services
            .get(service)
            .ok_or_else(|| TestbedError::UnknownService(service.to_string()))?;
        let zone = self
            .state
            .zones
            .get(&svc.zone)
            .ok_or_else(|| TestbedError::UnknownZone(svc.zone.clone()))?;
        svc.members
            .iter()
            .map(|name| {
                let vm = self
                    .state
                    .vms
                    .get(name)
                    .ok_or_else(|| TestbedError::UnknownResource(name.clone()))?;
                let agents = zone
                    .agents
                    .iter()
                    .map(|a| AgentProbe {
                        resource: a.resource,
                        software: a.software,
                        link: vm.link_up(&a.name),
                    })
                    .collect();
                Ok(MemberInputs {
                    name: name.clone(),
                    software_up: vm.is_active() && svc.running.contains(name),
                    agents,
                    nominal: self.nominal_metrics(vm),
                })
            })
            .collect()
    }

    fn assemble(
        &self,
        inputs: Vec<MemberInputs>,
        metrics: Vec<ResourceMetrics>,
    ) -> Result<ServiceHealthSnapshot, TestbedError> {
        let subservices = inputs
            .into_iter()
            .zip(metrics)
            .map(|(m, metrics)| {
                SubServiceHealth::evaluate(
                    m.name,
                    metrics,
                    m.software_up,
                    m.agents,
                    &self.config.bands,
                    &self.config.agent_policy,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ServiceHealthSnapshot::assemble(subservices)?)
    }

    fn run_healthcheck(&mut self, policy: &Policy) -> Result<ServiceHealthSnapshot, TestbedError> {
        let service = policy
            .subject
            .as_scalar()
            .ok_or_else(|| TestbedError::UnknownService(policy.subject.to_string()))?
            .to_string();
        let snapshot = self.evaluate_service(&service)?;
        let output = policy.get_str("output").unwrap_or("App_1").to_string();
        self.state.apps.insert(
            output,
            AppOutput {
                name: policy.get_str("name").unwrap_or("health").to_string(),
                service,
                at: self.state.clock,
                snapshot: snapshot.clone(),
            },
        );
        Ok(snapshot)
    }

    fn record(&mut self, record: TraceRecord) {
        self.trace.push(record);
    }
}

struct MemberInputs {
    name: String,
    software_up: bool,
    agents: Vec<AgentProbe>,
    nominal: ResourceMetrics,
}

fn apply_degrade(mut m: ResourceMetrics, degraded: &IndexMap<String, f64>) -> ResourceMetrics {
    use crate::health::{S_NET, S_R, U_CPU, U_RAM, U_STORAGE};
    for (metric, value) in degraded {
        match metric.as_str() {
            U_CPU | "cpu" => m.cpu_util = *value,
            U_RAM | "ram" => m.ram_util = *value,
            U_STORAGE | "storage" => m.storage_util = *value,
            S_NET | "net" => m.net_status = *value,
            S_R | "status" => m.resource_status = *value,
            _ => {}
        }
    }
    m
}

/// `0.999 -> "99.9%"`, `1.0 -> "100%"`.
pub fn fmt_fraction_pct(fraction: f64) -> String {
    fmt_pct(fraction * 100.0)
}

/// `50.0 -> "50%"`, trimming to at most four decimals.
pub fn fmt_pct(percent: f64) -> String {
    let r = (percent * 1e4).round() / 1e4;
    format!("{r}%")
}
