//! Hierarchical health KPIs: resource, agent, sub-service and service.
//!
//! Every composition here is a policy function over three-level
//! severities. The default policy is the Kleene minimum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kpi::{kleene_min, BandSet, KpiError, KpiVector, Level3, QuantBands, Unit};

pub const U_CPU: &str = "u_cpu";
pub const U_RAM: &str = "u_ram";
pub const U_STORAGE: &str = "u_storage";
pub const S_NET: &str = "s_net";
pub const S_R: &str = "s_r";

/// Metric names in presentation order.
pub const RESOURCE_KPIS: [&str; 5] = [U_CPU, U_RAM, U_STORAGE, S_NET, S_R];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HealthError {
    #[error("{0} needs at least one component")]
    Empty(&'static str),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

/// Utilization and status readings for one resource, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceMetrics {
    pub cpu_util: f64,
    pub ram_util: f64,
    pub storage_util: f64,
    pub net_status: f64,
    pub resource_status: f64,
}

impl ResourceMetrics {
    pub fn new(cpu: f64, ram: f64, storage: f64, net: f64, status: f64) -> Self {
        Self {
            cpu_util: cpu,
            ram_util: ram,
            storage_util: storage,
            net_status: net,
            resource_status: status,
        }
    }

    /// A powered-off resource reports zero everywhere.
    pub fn dead() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.cpu_util,
            self.ram_util,
            self.storage_util,
            self.net_status,
            self.resource_status,
        ]
    }

    pub fn to_kpis(&self) -> Result<KpiVector, KpiError> {
        let entries = RESOURCE_KPIS
            .iter()
            .zip(self.values())
            .map(|(name, v)| crate::kpi::KpiValue::new(*name, v, Unit::Percent))
            .collect::<Result<Vec<_>, _>>()?;
        KpiVector::from_entries(crate::kpi::VectorKind::Operational, entries)
    }
}

/// Bands used to quantize resource metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceBands {
    pub cpu: QuantBands,
    pub ram: QuantBands,
    pub storage: QuantBands,
    pub status: QuantBands,
}

impl Default for ResourceBands {
    fn default() -> Self {
        Self {
            cpu: QuantBands::utilization_default(),
            ram: QuantBands::utilization_default(),
            storage: QuantBands::utilization_default(),
            status: QuantBands::binary_status(),
        }
    }
}

impl ResourceBands {
    pub fn band_set(&self) -> BandSet {
        BandSet::new()
            .with(U_CPU, self.cpu.clone())
            .with(U_RAM, self.ram.clone())
            .with(U_STORAGE, self.storage.clone())
            .with(S_NET, self.status.clone())
            .with(S_R, self.status.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceHealth {
    pub level: Level3,
    /// 100 when healthy, 50 on warning, 0 when critical.
    pub percent: f64,
}

pub fn resource_health(metrics: &ResourceMetrics, bands: &ResourceBands) -> Result<ResourceHealth, HealthError> {
    let level = crate::kpi::kleene_assess(&metrics.to_kpis()?, &bands.band_set())?;
    let percent = match level {
        Level3::Normal => 100.0,
        Level3::Warning => 50.0,
        Level3::Critical => 0.0,
    };
    Ok(ResourceHealth { level, percent })
}

/// Policy function used to fold a list of levels into one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combinator {
    #[default]
    Min,
    /// Arithmetic mean rounded to the nearest level, halves toward the worse.
    Mean,
}

impl Combinator {
    pub fn apply(self, levels: &[Level3]) -> Option<Level3> {
        if levels.is_empty() {
            return None;
        }
        Some(match self {
            Combinator::Min => kleene_min(levels.iter().copied()),
            Combinator::Mean => {
                let sum: i32 = levels.iter().map(|l| i32::from(l.value())).sum();
                let mean = f64::from(sum) / levels.len() as f64;
                let rounded = (mean - 0.5).ceil() as i8;
                Level3::from_value(rounded.clamp(-1, 1)).expect("clamped")
            }
        })
    }
}

pub fn composite_resource_health(levels: &[Level3]) -> Result<Level3, HealthError> {
    composite_resource_health_with(levels, Combinator::Min)
}

pub fn composite_resource_health_with(levels: &[Level3], f: Combinator) -> Result<Level3, HealthError> {
    f.apply(levels).ok_or(HealthError::Empty("composite resource health"))
}

/// Health inputs reported by one monitored agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProbe {
    pub resource: Level3,
    pub software: bool,
    pub link: bool,
}

impl AgentProbe {
    pub fn healthy() -> Self {
        Self {
            resource: Level3::Normal,
            software: true,
            link: true,
        }
    }

    pub fn worst(&self) -> Level3 {
        kleene_min([
            self.resource,
            Level3::from_binary(self.software),
            Level3::from_binary(self.link),
        ])
    }

    pub fn is_good(&self) -> bool {
        self.worst() == Level3::Normal
    }
}

/// Cut points for the relative-average agent policy, as fractions of
/// agents in good condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentQuantizer {
    pub normal_at: f64,
    pub warning_at: f64,
}

impl Default for AgentQuantizer {
    fn default() -> Self {
        Self {
            normal_at: 0.9,
            warning_at: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
#[derive(Default)]
pub enum AgentPolicy {
    #[default]
    Strict,
    RelativeAverage {
        quantizer: AgentQuantizer,
    },
    CountMatch {
        k: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentVerdict {
    Level(Level3),
    Met(bool),
}

impl AgentVerdict {
    /// Boolean verdicts feed the sub-service minimum as 1 or 0.
    pub fn as_level(self) -> Level3 {
        match self {
            AgentVerdict::Level(l) => l,
            AgentVerdict::Met(b) => Level3::from_binary(b),
        }
    }
}

/// Good/bad agent counters.
pub fn agent_counts(agents: &[AgentProbe]) -> (u32, u32) {
    let good = agents.iter().filter(|a| a.is_good()).count() as u32;
    (good, agents.len() as u32 - good)
}

pub fn agent_health(agents: &[AgentProbe], policy: &AgentPolicy) -> Result<AgentVerdict, HealthError> {
    if agents.is_empty() {
        return Err(HealthError::Empty("agent health"));
    }
    Ok(match policy {
        AgentPolicy::Strict => AgentVerdict::Level(kleene_min(agents.iter().map(AgentProbe::worst))),
        AgentPolicy::RelativeAverage { quantizer } => {
            let (good, _) = agent_counts(agents);
            let ratio = f64::from(good) / agents.len() as f64;
            let level = if ratio >= quantizer.normal_at {
                Level3::Normal
            } else if ratio >= quantizer.warning_at {
                Level3::Warning
            } else {
                Level3::Critical
            };
            AgentVerdict::Level(level)
        }
        AgentPolicy::CountMatch { k } => {
            let (good, bad) = agent_counts(agents);
            AgentVerdict::Met(i64::from(good) - i64::from(bad) >= i64::from(*k))
        }
    })
}

pub fn subservice_health(resource: Level3, software: Level3, agents: Level3) -> Level3 {
    kleene_min([resource, software, agents])
}

/// Healthy or degraded counts as up, critical as down.
pub fn normalize_health(level: Level3) -> u8 {
    match level {
        Level3::Normal | Level3::Warning => 1,
        Level3::Critical => 0,
    }
}

pub fn service_health_pct(subservice_levels: &[Level3]) -> Result<f64, HealthError> {
    if subservice_levels.is_empty() {
        return Err(HealthError::Empty("service health"));
    }
    let up: u32 = subservice_levels.iter().map(|l| u32::from(normalize_health(*l))).sum();
    Ok(f64::from(up) / subservice_levels.len() as f64 * 100.0)
}

pub fn composite_service_health(resource: Level3, software: Level3, network: Level3) -> Level3 {
    composite_service_health_with(resource, software, network, Combinator::Min)
}

pub fn composite_service_health_with(resource: Level3, software: Level3, network: Level3, f: Combinator) -> Level3 {
    f.apply(&[resource, software, network]).expect("three components")
}

/// Health of one independent slice of the service (one resource plus the
/// agents it serves).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubServiceHealth {
    pub name: String,
    pub metrics: ResourceMetrics,
    pub resource: Level3,
    pub software: Level3,
    pub agents: Level3,
    pub agent_probes: Vec<AgentProbe>,
    pub combined: Level3,
}

impl SubServiceHealth {
    pub fn evaluate(
        name: impl Into<String>,
        metrics: ResourceMetrics,
        software_up: bool,
        agent_probes: Vec<AgentProbe>,
        bands: &ResourceBands,
        agent_policy: &AgentPolicy,
    ) -> Result<Self, HealthError> {
        let resource = resource_health(&metrics, bands)?.level;
        let software = Level3::from_binary(software_up);
        let agents = agent_health(&agent_probes, agent_policy)?.as_level();
        Ok(Self {
            name: name.into(),
            metrics,
            resource,
            software,
            agents,
            agent_probes,
            combined: subservice_health(resource, software, agents),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceHealthSnapshot {
    pub subservices: Vec<SubServiceHealth>,
    pub k_hr: Level3,
    pub k_hsw: Level3,
    pub k_hnet: Level3,
    pub k_hs: Level3,
    pub k_hs_pct: f64,
}

impl ServiceHealthSnapshot {
    pub fn assemble(subservices: Vec<SubServiceHealth>) -> Result<Self, HealthError> {
        let resources: Vec<Level3> = subservices.iter().map(|s| s.resource).collect();
        let k_hr = composite_resource_health(&resources)?;
        let k_hsw = kleene_min(subservices.iter().map(|s| s.software));
        let k_hnet = kleene_min(subservices.iter().map(|s| s.agents));
        let combined: Vec<Level3> = subservices.iter().map(|s| s.combined).collect();
        let k_hs_pct = service_health_pct(&combined)?;
        Ok(Self {
            k_hs: composite_service_health(k_hr, k_hsw, k_hnet),
            subservices,
            k_hr,
            k_hsw,
            k_hnet,
            k_hs_pct,
        })
    }

    /// The worst sub-service, first in order on ties.
    pub fn worst(&self) -> Option<&SubServiceHealth> {
        self.subservices
            .iter()
            .fold(None, |acc: Option<&SubServiceHealth>, s| match acc {
                Some(a) if a.combined <= s.combined => Some(a),
                _ => Some(s),
            })
    }

    /// At least one sub-service is up.
    pub fn is_available(&self) -> bool {
        self.subservices.iter().any(|s| normalize_health(s.combined) == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Level3::*;

    #[test]
    fn resource_health_cases() {
        let b = ResourceBands::default();
        let c1 = ResourceMetrics::new(60.0, 60.0, 50.0, 100.0, 100.0);
        assert_eq!(resource_health(&c1, &b).unwrap().level, Normal);
        assert_eq!(resource_health(&c1, &b).unwrap().percent, 100.0);
        assert_eq!(resource_health(&ResourceMetrics::dead(), &b).unwrap().level, Critical);
        let hot = ResourceMetrics::new(90.0, 55.0, 80.0, 100.0, 100.0);
        assert_eq!(resource_health(&hot, &b).unwrap().level, Critical);
    }

    #[test]
    fn composite_resource() {
        assert_eq!(composite_resource_health(&[Normal, Normal]).unwrap(), Normal);
        assert_eq!(composite_resource_health(&[Normal, Critical]).unwrap(), Critical);
        assert_eq!(composite_resource_health(&[Warning, Normal]).unwrap(), Warning);
        assert!(composite_resource_health(&[]).is_err());
    }

    #[test]
    fn mean_combinator_rounds_toward_worse() {
        assert_eq!(Combinator::Mean.apply(&[Normal, Critical]), Some(Warning));
        assert_eq!(Combinator::Mean.apply(&[Normal, Warning]), Some(Warning));
        assert_eq!(Combinator::Mean.apply(&[Normal, Normal, Warning]), Some(Normal));
    }

    #[test]
    fn agent_policies() {
        let all_good = vec![AgentProbe::healthy(); 3];
        assert_eq!(
            agent_health(&all_good, &AgentPolicy::Strict).unwrap(),
            AgentVerdict::Level(Normal)
        );
        let cut = vec![
            AgentProbe {
                link: false,
                ..AgentProbe::healthy()
            };
            3
        ];
        assert_eq!(
            agent_health(&cut, &AgentPolicy::Strict).unwrap(),
            AgentVerdict::Level(Warning)
        );

        let mut mixed = vec![AgentProbe::healthy(); 7];
        mixed.extend(vec![
            AgentProbe {
                software: false,
                ..AgentProbe::healthy()
            };
            2
        ]);
        assert_eq!(agent_counts(&mixed), (7, 2));
        assert_eq!(
            agent_health(&mixed, &AgentPolicy::CountMatch { k: 5 }).unwrap(),
            AgentVerdict::Met(true)
        );
        assert_eq!(
            agent_health(&mixed, &AgentPolicy::CountMatch { k: 6 }).unwrap(),
            AgentVerdict::Met(false)
        );
        // 7/9 good: below the 90% cut, above the 50% cut.
        assert_eq!(
            agent_health(
                &mixed,
                &AgentPolicy::RelativeAverage {
                    quantizer: AgentQuantizer::default()
                }
            )
            .unwrap(),
            AgentVerdict::Level(Warning)
        );
        assert!(agent_health(&[], &AgentPolicy::Strict).is_err());
    }

    #[test]
    fn subservice_and_normalize() {
        assert_eq!(subservice_health(Normal, Normal, Normal), Normal);
        assert_eq!(subservice_health(Critical, Warning, Warning), Critical);
        assert_eq!(subservice_health(Normal, Warning, Normal), Warning);
        assert_eq!(normalize_health(Normal), 1);
        assert_eq!(normalize_health(Warning), 1);
        assert_eq!(normalize_health(Critical), 0);
    }

    #[test]
    fn service_percentages() {
        assert_eq!(service_health_pct(&[Normal, Critical]).unwrap(), 50.0);
        assert_eq!(service_health_pct(&[Normal, Normal]).unwrap(), 100.0);
        assert_eq!(service_health_pct(&[Critical; 3]).unwrap(), 0.0);
        assert!(service_health_pct(&[]).is_err());
    }

    #[test]
    fn composite_service() {
        assert_eq!(composite_service_health(Normal, Normal, Normal), Normal);
        assert_eq!(composite_service_health(Critical, Warning, Warning), Critical);
        assert_eq!(composite_service_health(Warning, Normal, Normal), Warning);
    }

    #[test]
    fn snapshot_with_one_dead_collector() {
        let bands = ResourceBands::default();
        let up = SubServiceHealth::evaluate(
            "collector_1",
            ResourceMetrics::new(60.0, 60.0, 50.0, 100.0, 100.0),
            true,
            vec![AgentProbe::healthy(); 4],
            &bands,
            &AgentPolicy::Strict,
        )
        .unwrap();
        let down = SubServiceHealth::evaluate(
            "collector_2",
            ResourceMetrics::dead(),
            false,
            vec![
                AgentProbe {
                    link: false,
                    ..AgentProbe::healthy()
                };
                4
            ],
            &bands,
            &AgentPolicy::Strict,
        )
        .unwrap();
        assert_eq!(
            (down.resource, down.software, down.agents),
            (Critical, Warning, Warning)
        );
        let snap = ServiceHealthSnapshot::assemble(vec![up, down]).unwrap();
        assert_eq!((snap.k_hr, snap.k_hsw, snap.k_hnet), (Critical, Warning, Warning));
        assert_eq!(snap.k_hs, Critical);
        assert_eq!(snap.k_hs_pct, 50.0);
        assert_eq!(snap.worst().unwrap().name, "collector_2");
        assert!(snap.is_available());
    }
}
