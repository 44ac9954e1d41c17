//! Parallel-redundancy sizing and probe-driven availability tracking.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AvailabilityError {
    #[error("{name} = {value} must lie strictly between 0 and 1")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("redundancy must be at least 1")]
    ZeroRedundancy,
    #[error("target availability {0} cannot be met by a finite number of resources")]
    Unsatisfiable(f64),
    #[error("probe at t={at}s does not advance past the previous probe at t={last}s")]
    NonMonotone { at: u64, last: u64 },
    #[error("planned time must be positive")]
    ZeroPlanned,
}

/// Absolute slack when comparing availabilities near 1. `1 - t` loses
/// most of its precision to cancellation (`1 - 0.999999999` is off by
/// ~3e-17), so `1 - 0.001^3` would otherwise miss `0.999999999`.
pub const AVAILABILITY_ATOL: f64 = 4.0 * f64::EPSILON;

fn open_unit(name: &'static str, value: f64) -> Result<(), AvailabilityError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(AvailabilityError::OutOfRange { name, value })
    }
}

/// Availability of `n` independent redundant resources: `1 - (1 - p)^n`.
pub fn combined_availability(per_resource: f64, n: u32) -> Result<f64, AvailabilityError> {
    open_unit("per-resource availability", per_resource)?;
    if n == 0 {
        return Err(AvailabilityError::ZeroRedundancy);
    }
    Ok(1.0 - unavailability(per_resource, n))
}

fn unavailability(per_resource: f64, n: u32) -> f64 {
    (1.0 - per_resource).powi(n.min(i32::MAX as u32) as i32)
}

/// Whether `n` resources of availability `per_resource` meet `target`.
pub fn meets_target(per_resource: f64, n: u32, target: f64) -> bool {
    unavailability(per_resource, n) <= (1.0 - target) + AVAILABILITY_ATOL
}

/// Smallest `n` whose combined availability meets `target`.
pub fn required_redundancy(target: f64, per_resource: f64) -> Result<u32, AvailabilityError> {
    if target >= 1.0 {
        return Err(AvailabilityError::Unsatisfiable(target));
    }
    open_unit("target availability", target)?;
    open_unit("per-resource availability", per_resource)?;
    if per_resource >= target {
        return Ok(1);
    }
    let estimate = ((1.0 - target).ln() / (1.0 - per_resource).ln()).ceil();
    if !estimate.is_finite() || estimate > f64::from(u32::MAX - 1) {
        return Err(AvailabilityError::Unsatisfiable(target));
    }
    let mut n = (estimate as u32).max(1);
    // The log ratio can land one off either side of an integer.
    while n > 1 && meets_target(per_resource, n - 1, target) {
        n -= 1;
    }
    while !meets_target(per_resource, n, target) {
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub at: u64,
    pub healthy: bool,
}

/// Downtime counter fed by periodic health probes. Every unhealthy probe
/// accounts for one full probe period of downtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityTracker {
    #[serde(with = "secs")]
    probe_period: Duration,
    #[serde(with = "opt_secs")]
    planned: Option<Duration>,
    #[serde(with = "secs")]
    down: Duration,
    probes: u64,
    unhealthy: u64,
    #[serde(skip)]
    log: Vec<Probe>,
}

impl Default for AvailabilityTracker {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl AvailabilityTracker {
    pub fn new(probe_period: Duration) -> Self {
        Self {
            probe_period,
            planned: None,
            down: Duration::ZERO,
            probes: 0,
            unhealthy: 0,
            log: Vec::new(),
        }
    }

    /// Fixes the planned service time; without it the elapsed probe time is
    /// used.
    pub fn with_planned(mut self, planned: Duration) -> Self {
        self.planned = Some(planned);
        self
    }

    pub fn set_planned(&mut self, planned: Duration) {
        self.planned = Some(planned);
    }

    pub fn record_probe(&mut self, at: u64, healthy: bool) -> Result<(), AvailabilityError> {
        if let Some(last) = self.log.last() {
            if at <= last.at {
                return Err(AvailabilityError::NonMonotone { at, last: last.at });
            }
        }
        self.log.push(Probe { at, healthy });
        self.probes += 1;
        if !healthy {
            self.unhealthy += 1;
            self.down += self.probe_period;
        }
        Ok(())
    }

    pub fn probe_period(&self) -> Duration {
        self.probe_period
    }

    pub fn t_down(&self) -> Duration {
        self.down
    }

    pub fn t_planned(&self) -> Duration {
        self.planned
            .unwrap_or(self.probe_period * self.probes.min(u64::from(u32::MAX)) as u32)
    }

    pub fn probes(&self) -> u64 {
        self.probes
    }

    pub fn unhealthy_probes(&self) -> u64 {
        self.unhealthy
    }

    pub fn log(&self) -> &[Probe] {
        &self.log
    }
}

/// `(t_planned - t_down) / t_planned`.
pub fn service_availability(tracker: &AvailabilityTracker) -> Result<f64, AvailabilityError> {
    availability_from(tracker.t_planned(), tracker.t_down())
}

pub fn availability_from(planned: Duration, down: Duration) -> Result<f64, AvailabilityError> {
    let planned = planned.as_secs_f64();
    if planned <= 0.0 {
        return Err(AvailabilityError::ZeroPlanned);
    }
    let down = down.as_secs_f64().min(planned);
    Ok((planned - down) / planned)
}

/// Largest downtime over `planned` that still meets `target`.
pub fn max_downtime(target: f64, planned: Duration) -> Result<Duration, AvailabilityError> {
    open_unit("target availability", target)?;
    Ok(planned.mul_f64(1.0 - target))
}

/// 1 when the service availability meets the threshold, else 0.
pub fn intent_health(service_availability: f64, threshold: f64) -> u8 {
    u8::from(service_availability >= threshold)
}

pub fn hours(h: f64) -> Duration {
    Duration::from_secs_f64(h * 3600.0)
}

pub fn minutes(m: f64) -> Duration {
    Duration::from_secs_f64(m * 60.0)
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Option::<f64>::deserialize(d)?
            .map(|v| Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined() {
        assert_eq!(combined_availability(0.999, 1).unwrap(), 0.999);
        assert!((combined_availability(0.999, 2).unwrap() - 0.999_999).abs() < 1e-12);
        assert_eq!(combined_availability(0.5, 2).unwrap(), 0.75);
        assert!(combined_availability(1.0, 2).is_err());
        assert!(combined_availability(0.0, 2).is_err());
        assert_eq!(
            combined_availability(0.9, 0).unwrap_err(),
            AvailabilityError::ZeroRedundancy
        );
    }

    #[test]
    fn redundancy() {
        assert_eq!(required_redundancy(0.9999, 0.999).unwrap(), 2);
        assert_eq!(required_redundancy(0.999, 0.999).unwrap(), 1);
        assert_eq!(required_redundancy(0.999_999_999, 0.999).unwrap(), 3);
        assert_eq!(required_redundancy(0.9, 0.99).unwrap(), 1);
        assert!(matches!(
            required_redundancy(1.0, 0.999),
            Err(AvailabilityError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn probes_accumulate_downtime() {
        let mut t = AvailabilityTracker::default();
        t.record_probe(60, true).unwrap();
        assert_eq!(t.t_down(), Duration::ZERO);
        t.record_probe(120, false).unwrap();
        t.record_probe(180, false).unwrap();
        assert_eq!(t.t_down(), Duration::from_secs(120));
        assert_eq!(
            t.record_probe(180, true).unwrap_err(),
            AvailabilityError::NonMonotone { at: 180, last: 180 }
        );
    }

    /// A 90 s outage sampled by 60 s probes covers one or two probe
    /// instants depending on where it starts.
    #[test]
    fn sub_period_outage_rounds_to_probes() {
        let mut seen = std::collections::BTreeSet::new();
        for start in 0..60u64 {
            let (s, e) = (start + 600, start + 690);
            let mut t = AvailabilityTracker::default();
            for k in 1..=20u64 {
                let at = k * 60;
                t.record_probe(at, !(at >= s && at < e)).unwrap();
            }
            seen.insert(t.t_down().as_secs());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![60, 120]);
    }

    #[test]
    fn availability_values() {
        let a = availability_from(hours(720.0), hours(0.03)).unwrap();
        assert!((0.9999..1.0).contains(&a));
        assert_eq!(availability_from(hours(10.0), Duration::ZERO).unwrap(), 1.0);
        let a = availability_from(hours(8760.0), hours(0.8767)).unwrap();
        assert!((a - 0.9999).abs() < 1e-6);
        assert_eq!(
            availability_from(Duration::ZERO, Duration::ZERO).unwrap_err(),
            AvailabilityError::ZeroPlanned
        );
    }

    #[test]
    fn downtime_budget() {
        let d = max_downtime(0.9999, hours(8760.0)).unwrap();
        assert!((d.as_secs_f64() / 60.0 - 52.56).abs() < 1e-6);
        let d = max_downtime(0.9999, hours(720.0)).unwrap();
        assert!((d.as_secs_f64() / 60.0 - 4.32).abs() < 1e-6);
        assert_eq!(max_downtime(0.5, hours(10.0)).unwrap(), hours(5.0));
    }

    #[test]
    fn intent_predicate() {
        assert_eq!(intent_health(0.9999, 0.9999), 1);
        assert_eq!(intent_health(0.9998, 0.9999), 0);
        assert_eq!(intent_health(1.0, 0.9999), 1);
    }

    #[test]
    fn elapsed_planned_default() {
        let mut t = AvailabilityTracker::default();
        for k in 1..=10 {
            t.record_probe(k * 60, k != 3).unwrap();
        }
        assert_eq!(t.t_planned(), Duration::from_secs(600));
        assert!((service_availability(&t).unwrap() - 0.9).abs() < 1e-12);
    }
}
