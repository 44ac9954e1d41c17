//! Intent drift: per-KPI deltas against targets, the squared-error
//! function, its gradient and the scaled gradient used to rank deviations.
//!
//! Two domains are supported. In the value domain deltas are measured in
//! the KPI's own unit; band targets measure against the violated edge and
//! have a dead zone inside the band. In the level domain every KPI is
//! first quantized to `-1/0/+1` and compared with the point target `+1`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kpi::{BandSet, KpiError, KpiVector, Level3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriftError {
    #[error("operational and target KPIs do not pair up (no target: {missing_target:?}; no operational value: {missing_operational:?})")]
    Pairing {
        missing_target: Vec<String>,
        missing_operational: Vec<String>,
    },
    #[error("invalid target for `{kpi}`: {reason}")]
    InvalidTarget { kpi: String, reason: String },
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

/// Target for a single KPI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Point(f64),
    Band { low: f64, high: f64 },
}

impl Target {
    /// The value the operational reading is measured against: the point
    /// itself, or for a band the violated edge (the reading itself when it
    /// lies inside the band).
    pub fn effective(&self, operational: f64) -> f64 {
        match *self {
            Target::Point(t) => t,
            Target::Band { low, high } => {
                if operational > high {
                    high
                } else if operational < low {
                    low
                } else {
                    operational
                }
            }
        }
    }

    /// Edge used as the scaling denominator.
    fn scale_edge(&self, operational: f64) -> f64 {
        match *self {
            Target::Point(t) => t,
            Target::Band { low, high } => {
                if operational < low {
                    low
                } else {
                    high
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetSpec(IndexMap<String, Target>);

impl TargetSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kpi: impl Into<String>, target: Target) -> Result<(), DriftError> {
        let kpi = kpi.into();
        match target {
            // Also rejects NaN bounds.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            Target::Band { low, high } if !(low <= high) => {
                return Err(DriftError::InvalidTarget {
                    kpi,
                    reason: format!("band low {low} exceeds high {high}"),
                })
            }
            Target::Point(t) if !t.is_finite() => {
                return Err(DriftError::InvalidTarget {
                    kpi,
                    reason: "non-finite point target".into(),
                })
            }
            _ => {}
        }
        self.0.insert(kpi, target);
        Ok(())
    }

    pub fn point(mut self, kpi: &str, value: f64) -> Result<Self, DriftError> {
        self.insert(kpi, Target::Point(value))?;
        Ok(self)
    }

    pub fn band(mut self, kpi: &str, low: f64, high: f64) -> Result<Self, DriftError> {
        self.insert(kpi, Target::Band { low, high })?;
        Ok(self)
    }

    pub fn get(&self, kpi: &str) -> Option<&Target> {
        self.0.get(kpi)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Target)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub kpi: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaVector(Vec<DeltaEntry>);

impl DeltaVector {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self(
            pairs
                .into_iter()
                .map(|(k, d)| DeltaEntry {
                    kpi: k.into(),
                    delta: d,
                })
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeltaEntry> {
        self.0.iter()
    }

    pub fn get(&self, kpi: &str) -> Option<f64> {
        self.0.iter().find(|e| e.kpi == kpi).map(|e| e.delta)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|e| e.delta)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftDomain {
    Value,
    Level,
}

/// One gradient component. `display` is the value cut to two decimals;
/// `singular` marks a scaled component whose scaling edge was zero, in
/// which case `value` is a signed infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientComponent {
    pub kpi: String,
    #[serde(with = "crate::serde_float")]
    pub value: f64,
    #[serde(with = "crate::serde_float")]
    pub display: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub singular: bool,
}

impl GradientComponent {
    fn new(kpi: &str, value: f64) -> Self {
        Self {
            kpi: kpi.to_string(),
            value,
            display: two_decimals(value),
            singular: false,
        }
    }

    fn singular(kpi: &str, delta: f64) -> Self {
        let value = delta.signum() * f64::INFINITY;
        Self {
            kpi: kpi.to_string(),
            value,
            display: value,
            singular: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub domain: DriftDomain,
    pub scaled: bool,
    pub components: Vec<GradientComponent>,
}

impl GradientVector {
    pub fn get(&self, kpi: &str) -> Option<&GradientComponent> {
        self.components.iter().find(|c| c.kpi == kpi)
    }

    pub fn value(&self, kpi: &str) -> Option<f64> {
        self.get(kpi).map(|c| c.value)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.value == 0.0)
    }

    pub fn has_singularity(&self) -> bool {
        self.components.iter().any(|c| c.singular)
    }
}

/// Truncates toward zero at two decimals. A tiny bias absorbs binary
/// representation error (0.29 stored as 0.28999…).
pub fn two_decimals(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let scaled = x * 100.0;
    (scaled + 1e-9 * scaled.signum()).trunc() / 100.0
}

/// Scaling applied to a non-normal gradient component.
pub trait GradientScaling: Send + Sync {
    /// Returns `None` when the scale factor is zero.
    fn scale(&self, raw_gradient: f64, target: &Target, operational: f64) -> Option<f64>;
}

/// Divides by the effective target edge: `2·δ / edge`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EdgeScaling;

impl GradientScaling for EdgeScaling {
    fn scale(&self, raw: f64, target: &Target, operational: f64) -> Option<f64> {
        let edge = target.scale_edge(operational);
        if edge == 0.0 {
            None
        } else {
            Some(raw / edge)
        }
    }
}

/// Leaves the raw gradient untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoScaling;

impl GradientScaling for NoScaling {
    fn scale(&self, raw: f64, _: &Target, _: f64) -> Option<f64> {
        Some(raw)
    }
}

struct Paired<'a> {
    kpi: &'a str,
    operational: f64,
    target: &'a Target,
}

fn pair<'a>(operational: &'a KpiVector, target: &'a TargetSpec) -> Result<Vec<Paired<'a>>, DriftError> {
    let missing_target: Vec<String> = operational
        .names()
        .filter(|n| target.get(n).is_none())
        .map(str::to_string)
        .collect();
    let missing_operational: Vec<String> = target
        .iter()
        .filter(|(n, _)| operational.get(n).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    if !missing_target.is_empty() || !missing_operational.is_empty() {
        return Err(DriftError::Pairing {
            missing_target,
            missing_operational,
        });
    }
    Ok(operational
        .iter()
        .map(|kv| Paired {
            kpi: &kv.name,
            operational: kv.value,
            target: target.get(&kv.name).expect("paired above"),
        })
        .collect())
}

pub fn delta_vector(operational: &KpiVector, target: &TargetSpec) -> Result<DeltaVector, DriftError> {
    Ok(DeltaVector::from_pairs(
        pair(operational, target)?
            .into_iter()
            .map(|p| (p.kpi, p.operational - p.target.effective(p.operational))),
    ))
}

pub fn euclidean_distance(delta: &DeltaVector) -> f64 {
    error(delta).sqrt()
}

/// Sum of squared deltas.
pub fn error(delta: &DeltaVector) -> f64 {
    delta.values().map(|d| d * d).sum()
}

/// Raw gradient of the error function, `2·δ` per KPI.
pub fn gradient(operational: &KpiVector, target: &TargetSpec) -> Result<GradientVector, DriftError> {
    let delta = delta_vector(operational, target)?;
    Ok(raw_gradient(&delta, DriftDomain::Value))
}

fn raw_gradient(delta: &DeltaVector, domain: DriftDomain) -> GradientVector {
    GradientVector {
        domain,
        scaled: false,
        components: delta
            .iter()
            .map(|e| GradientComponent::new(&e.kpi, 2.0 * e.delta))
            .collect(),
    }
}

/// Gradient restricted to non-normal KPIs and scaled (by default by the
/// effective target edge). KPIs quantized as normal contribute zero.
pub fn scaled_gradient(
    operational: &KpiVector,
    target: &TargetSpec,
    bands: &BandSet,
) -> Result<GradientVector, DriftError> {
    scaled_gradient_with(operational, target, bands, &EdgeScaling)
}

pub fn scaled_gradient_with(
    operational: &KpiVector,
    target: &TargetSpec,
    bands: &BandSet,
    scaling: &dyn GradientScaling,
) -> Result<GradientVector, DriftError> {
    let pairs = pair(operational, target)?;
    let mut components = Vec::with_capacity(pairs.len());
    for (p, kv) in pairs.iter().zip(operational.iter()) {
        if bands.level3(kv)? == Level3::Normal {
            components.push(GradientComponent::new(p.kpi, 0.0));
            continue;
        }
        let delta = p.operational - p.target.effective(p.operational);
        let raw = 2.0 * delta;
        let component = match scaling.scale(raw, p.target, p.operational) {
            Some(v) => GradientComponent::new(p.kpi, v),
            None if delta == 0.0 => GradientComponent::new(p.kpi, 0.0),
            None => GradientComponent::singular(p.kpi, delta),
        };
        components.push(component);
    }
    Ok(GradientVector {
        domain: DriftDomain::Value,
        scaled: true,
        components,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub kpi: String,
    pub level: Level3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub domain: DriftDomain,
    pub delta: DeltaVector,
    pub distance: f64,
    pub error: f64,
    pub gradient: GradientVector,
    pub scaled_gradient: GradientVector,
    pub levels: Vec<LevelEntry>,
    pub is_zero_drift: bool,
}

impl DriftReport {
    pub fn level(&self, kpi: &str) -> Option<Level3> {
        self.levels.iter().find(|e| e.kpi == kpi).map(|e| e.level)
    }

    pub fn worst_level(&self) -> Level3 {
        crate::kpi::kleene_min(self.levels.iter().map(|e| e.level))
    }

    fn assemble(
        domain: DriftDomain,
        delta: DeltaVector,
        scaled_gradient: GradientVector,
        levels: Vec<LevelEntry>,
    ) -> Self {
        let err = error(&delta);
        let gradient = raw_gradient(&delta, domain);
        let is_zero_drift = delta.values().all(|d| d == 0.0);
        Self {
            domain,
            gradient,
            distance: err.sqrt(),
            error: err,
            is_zero_drift,
            delta,
            scaled_gradient,
            levels,
        }
    }
}

/// Value-domain drift report.
pub fn drift_report(operational: &KpiVector, target: &TargetSpec, bands: &BandSet) -> Result<DriftReport, DriftError> {
    let delta = delta_vector(operational, target)?;
    let scaled = scaled_gradient(operational, target, bands)?;
    let levels = operational
        .iter()
        .map(|kv| {
            Ok(LevelEntry {
                kpi: kv.name.clone(),
                level: bands.level3(kv)?,
            })
        })
        .collect::<Result<Vec<_>, KpiError>>()?;
    Ok(DriftReport::assemble(DriftDomain::Value, delta, scaled, levels))
}

/// Level-domain drift report: each KPI is quantized to `-1/0/+1` and
/// compared with the point target `+1`.
pub fn level_drift_report(operational: &KpiVector, bands: &BandSet) -> Result<DriftReport, DriftError> {
    let levels = operational
        .iter()
        .map(|kv| {
            Ok(LevelEntry {
                kpi: kv.name.clone(),
                level: bands.level3(kv)?,
            })
        })
        .collect::<Result<Vec<_>, KpiError>>()?;
    Ok(level_report_from(levels))
}

/// Level-domain report over levels that are already classified.
pub fn level_report_from(levels: Vec<LevelEntry>) -> DriftReport {
    let delta = DeltaVector::from_pairs(
        levels
            .iter()
            .map(|e| (e.kpi.clone(), level_delta(e.level, Level3::Normal))),
    );
    let mut scaled = raw_gradient(&delta, DriftDomain::Level);
    scaled.scaled = true;
    DriftReport::assemble(DriftDomain::Level, delta, scaled, levels)
}

/// `δ` between two levels on the `-1/0/+1` scale.
pub fn level_delta(operational: Level3, target: Level3) -> f64 {
    f64::from(operational.value() - target.value())
}

/// `2·δ` between two levels.
pub fn level_gradient(operational: Level3, target: Level3) -> f64 {
    2.0 * level_delta(operational, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpi::{QuantBands, Unit};

    fn cpu(v: f64) -> KpiVector {
        KpiVector::operational().with("u_cpu", v, Unit::Percent).unwrap()
    }

    fn cpu_band() -> TargetSpec {
        TargetSpec::new().band("u_cpu", 40.0, 70.0).unwrap()
    }

    #[test]
    fn band_delta_uses_violated_edge() {
        assert_eq!(delta_vector(&cpu(90.0), &cpu_band()).unwrap().get("u_cpu"), Some(20.0));
        assert_eq!(delta_vector(&cpu(30.0), &cpu_band()).unwrap().get("u_cpu"), Some(-10.0));
        assert_eq!(delta_vector(&cpu(55.0), &cpu_band()).unwrap().get("u_cpu"), Some(0.0));
    }

    #[test]
    fn point_delta() {
        let t = TargetSpec::new().point("u_cpu", 50.0).unwrap();
        assert_eq!(delta_vector(&cpu(50.0), &t).unwrap().get("u_cpu"), Some(0.0));
    }

    #[test]
    fn pairing_error_lists_names() {
        let t = TargetSpec::new().point("u_ram", 50.0).unwrap();
        match delta_vector(&cpu(50.0), &t).unwrap_err() {
            DriftError::Pairing {
                missing_target,
                missing_operational,
            } => {
                assert_eq!(missing_target, vec!["u_cpu".to_string()]);
                assert_eq!(missing_operational, vec!["u_ram".to_string()]);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn distance_and_error() {
        assert_eq!(euclidean_distance(&DeltaVector::default()), 0.0);
        let d = DeltaVector::from_pairs([("a", 3.0), ("b", 4.0)]);
        assert_eq!(euclidean_distance(&d), 5.0);
        let d = DeltaVector::from_pairs([("a", 20.0), ("b", 10.0)]);
        assert_eq!(error(&d), 500.0);
        assert!((euclidean_distance(&d) - 22.360_679_774_997_9).abs() < 1e-12);
        assert_eq!(error(&DeltaVector::from_pairs([("a", -2.0)])), 4.0);
    }

    #[test]
    fn raw_gradient_doubles_delta() {
        let g = gradient(&cpu(90.0), &cpu_band()).unwrap();
        assert_eq!(g.value("u_cpu"), Some(40.0));
        let g = gradient(&cpu(55.0), &cpu_band()).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn level_gradient_of_dead_status() {
        assert_eq!(level_gradient(Level3::Critical, Level3::Normal), -4.0);
        assert_eq!(level_delta(Level3::Critical, Level3::Normal), -2.0);
    }

    #[test]
    fn zero_edge_is_flagged_not_divided() {
        let op = KpiVector::operational().with("errors", 3.0, Unit::Count).unwrap();
        let t = TargetSpec::new().point("errors", 0.0).unwrap();
        let bands = BandSet::new().with(
            "errors",
            QuantBands::new(0.0, 10.0, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap(),
        );
        let g = scaled_gradient(&op, &t, &bands).unwrap();
        let c = g.get("errors").unwrap();
        assert!(c.singular);
        assert_eq!(c.value, f64::INFINITY);
        assert!(g.has_singularity());
    }

    #[test]
    fn truncation_display() {
        assert_eq!(two_decimals(0.571_428), 0.57);
        assert_eq!(two_decimals(0.285_714), 0.28);
        assert_eq!(two_decimals(0.29), 0.29);
        assert_eq!(two_decimals(-1.0), -1.0);
    }

    #[test]
    fn unscaled_alternative() {
        let bands = BandSet::new().with("u_cpu", QuantBands::default());
        let g = scaled_gradient_with(&cpu(90.0), &cpu_band(), &bands, &NoScaling).unwrap();
        assert_eq!(g.value("u_cpu"), Some(40.0));
    }

    #[test]
    fn inverted_band_rejected() {
        assert!(TargetSpec::new().band("x", 5.0, 1.0).is_err());
    }
}
