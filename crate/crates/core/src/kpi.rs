//! KPI values, threshold bands and severity quantization.
//!
//! A KPI reading is first mapped onto a nine-level scale (`-4..=+4`, where
//! `0` is the normal band) and then folded onto three severities:
//! critical (`-1`), warning (`0`) and normal (`+1`). Aggregate assessment
//! over a vector of KPIs is the Kleene conjunction, i.e. the minimum
//! severity.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KpiError {
    #[error("KPI `{kpi}`: value {value} outside band domain [{lower}, {upper}]")]
    OutOfDomain {
        kpi: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("no quantization bands configured for KPI `{0}`")]
    MissingBands(String),
    #[error("KPI `{0}` is not present in the vector")]
    UnknownKpi(String),
    #[error("duplicate KPI `{0}` in vector")]
    DuplicateKpi(String),
    #[error("KPI `{kpi}`: value {value} is not a valid {unit}")]
    InvalidValue { kpi: String, value: f64, unit: Unit },
    #[error("invalid band configuration: {0}")]
    InvalidBands(String),
    #[error("level {0} is outside the nine-level scale")]
    InvalidLevel(i8),
}

/// Unit tag carried by every KPI value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Percent,
    Fraction,
    Count,
    Hours,
    Minutes,
}

impl Unit {
    fn admits(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            Unit::Percent => (0.0..=100.0).contains(&value),
            Unit::Fraction => (0.0..=1.0).contains(&value),
            Unit::Count | Unit::Hours | Unit::Minutes => value >= 0.0,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::Percent => "percent",
            Unit::Fraction => "fraction",
            Unit::Count => "count",
            Unit::Hours => "hours",
            Unit::Minutes => "minutes",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiValue {
    pub name: String,
    pub value: f64,
    pub unit: Unit,
}

impl KpiValue {
    pub fn new(name: impl Into<String>, value: f64, unit: Unit) -> Result<Self, KpiError> {
        let name = name.into();
        if !unit.admits(value) {
            return Err(KpiError::InvalidValue { kpi: name, value, unit });
        }
        Ok(Self { name, value, unit })
    }

    pub fn percent(name: impl Into<String>, value: f64) -> Result<Self, KpiError> {
        Self::new(name, value, Unit::Percent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    Operational,
    Target,
}

/// Ordered, name-unique set of KPI values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiVector {
    kind: VectorKind,
    entries: Vec<KpiValue>,
}

impl KpiVector {
    pub fn new(kind: VectorKind) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn operational() -> Self {
        Self::new(VectorKind::Operational)
    }

    pub fn target() -> Self {
        Self::new(VectorKind::Target)
    }

    pub fn from_entries(kind: VectorKind, entries: impl IntoIterator<Item = KpiValue>) -> Result<Self, KpiError> {
        let mut v = Self::new(kind);
        for e in entries {
            v.push(e)?;
        }
        Ok(v)
    }

    pub fn push(&mut self, value: KpiValue) -> Result<(), KpiError> {
        if self.get(&value.name).is_some() {
            return Err(KpiError::DuplicateKpi(value.name));
        }
        self.entries.push(value);
        Ok(())
    }

    /// Convenience for building vectors in one unit.
    pub fn with(mut self, name: &str, value: f64, unit: Unit) -> Result<Self, KpiError> {
        self.push(KpiValue::new(name, value, unit)?)?;
        Ok(self)
    }

    pub fn kind(&self) -> VectorKind {
        self.kind
    }

    pub fn get(&self, name: &str) -> Option<&KpiValue> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &KpiValue> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces the value of an existing entry; used by generators that
    /// perturb a single KPI.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), KpiError> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| KpiError::UnknownKpi(name.to_string()))?;
        if !entry.unit.admits(value) {
            return Err(KpiError::InvalidValue {
                kpi: name.to_string(),
                value,
                unit: entry.unit,
            });
        }
        entry.value = value;
        Ok(())
    }
}

/// A label on the nine-level scale, `-4..=+4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct Level9(i8);

impl Level9 {
    pub const NORMAL: Level9 = Level9(0);

    pub fn new(label: i8) -> Result<Self, KpiError> {
        if (-4..=4).contains(&label) {
            Ok(Self(label))
        } else {
            Err(KpiError::InvalidLevel(label))
        }
    }

    pub fn get(self) -> i8 {
        self.0
    }

    pub fn description(self) -> &'static str {
        match self.0 {
            -4 => "Very Low",
            -3 => "Low",
            -2 => "Slightly Low",
            -1 => "Slightly < Normal",
            0 => "Normal",
            1 => "Slightly > Normal",
            2 => "Slightly High",
            3 => "High",
            _ => "Very High",
        }
    }

    pub fn to_level3(self) -> Level3 {
        match self.0.abs() {
            0 => Level3::Normal,
            1 | 2 => Level3::Warning,
            _ => Level3::Critical,
        }
    }
}

impl TryFrom<i8> for Level9 {
    type Error = KpiError;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        Level9::new(v)
    }
}

impl From<Level9> for i8 {
    fn from(l: Level9) -> i8 {
        l.0
    }
}

/// Three-valued severity. Ordering follows the numeric value, so the
/// minimum of a set is its worst member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Level3 {
    Critical,
    Warning,
    Normal,
}

impl Level3 {
    pub const ALL: [Level3; 3] = [Level3::Critical, Level3::Warning, Level3::Normal];

    pub fn value(self) -> i8 {
        match self {
            Level3::Critical => -1,
            Level3::Warning => 0,
            Level3::Normal => 1,
        }
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Level3::Critical),
            0 => Some(Level3::Warning),
            1 => Some(Level3::Normal),
            _ => None,
        }
    }

    /// Binary probes (software up, link up) report 1 or 0.
    pub fn from_binary(up: bool) -> Self {
        if up {
            Level3::Normal
        } else {
            Level3::Warning
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Level3::Critical => "Critical",
            Level3::Warning => "Warning",
            Level3::Normal => "Normal",
        }
    }
}

impl TryFrom<i8> for Level3 {
    type Error = KpiError;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        Level3::from_value(v).ok_or(KpiError::InvalidLevel(v))
    }
}

impl From<Level3> for i8 {
    fn from(l: Level3) -> i8 {
        l.value()
    }
}

impl fmt::Display for Level3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Nine contiguous intervals covering `[lower, upper]`.
///
/// `edges[0..4]` bound the low side (`-4|-3`, `-3|-2`, `-2|-1`, `-1|0`) and
/// `edges[4..8]` the high side (`0|+1` … `+3|+4`). The normal band
/// `[edges[3], edges[4]]` is closed; every other edge value belongs to the
/// band closer to normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBands", into = "RawBands")]
pub struct QuantBands {
    lower: f64,
    upper: f64,
    edges: [f64; 8],
}

#[derive(Serialize, Deserialize)]
struct RawBands {
    domain: [f64; 2],
    edges: [f64; 8],
}

impl TryFrom<RawBands> for QuantBands {
    type Error = KpiError;
    fn try_from(raw: RawBands) -> Result<Self, Self::Error> {
        QuantBands::new(raw.domain[0], raw.domain[1], raw.edges)
    }
}

impl From<QuantBands> for RawBands {
    fn from(b: QuantBands) -> Self {
        RawBands {
            domain: [b.lower, b.upper],
            edges: b.edges,
        }
    }
}

impl QuantBands {
    pub fn new(lower: f64, upper: f64, edges: [f64; 8]) -> Result<Self, KpiError> {
        let all_finite = lower.is_finite() && upper.is_finite() && edges.iter().all(|e| e.is_finite());
        if !all_finite {
            return Err(KpiError::InvalidBands("non-finite bound".into()));
        }
        let mut prev = lower;
        for (i, e) in edges.iter().enumerate() {
            if *e < prev {
                return Err(KpiError::InvalidBands(format!(
                    "edge {i} ({e}) is below the previous bound ({prev})"
                )));
            }
            prev = *e;
        }
        if upper < prev {
            return Err(KpiError::InvalidBands(format!(
                "upper bound {upper} is below the last edge {prev}"
            )));
        }
        Ok(Self { lower, upper, edges })
    }

    /// Default bands for percent utilizations: normal is `[40, 70]`, other
    /// edges sit midway between reference sample points.
    pub fn utilization_default() -> Self {
        Self {
            lower: 0.0,
            upper: 100.0,
            edges: [12.5, 22.5, 32.5, 40.0, 70.0, 77.5, 82.5, 87.5],
        }
    }

    /// Degenerate bands for a threshold KPI: `[threshold, upper]` is normal
    /// and anything below it is `-4`.
    pub fn at_least(threshold: f64, lower: f64, upper: f64) -> Result<Self, KpiError> {
        Self::new(
            lower,
            upper,
            [threshold, threshold, threshold, threshold, upper, upper, upper, upper],
        )
    }

    /// Binary status in percent: 100 is normal, anything else critical.
    pub fn binary_status() -> Self {
        Self {
            lower: 0.0,
            upper: 100.0,
            edges: [100.0; 8],
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn normal(&self) -> (f64, f64) {
        (self.edges[3], self.edges[4])
    }

    pub fn edges(&self) -> &[f64; 8] {
        &self.edges
    }

    /// Label of the interval containing `value`, or `None` outside the domain.
    pub fn level9(&self, value: f64) -> Option<Level9> {
        if value.is_nan() || value < self.lower || value > self.upper {
            return None;
        }
        let label = if value < self.edges[3] {
            -4 + self.edges[..3].iter().filter(|e| value >= **e).count() as i8
        } else if value <= self.edges[4] {
            0
        } else {
            self.edges[4..].iter().filter(|e| value > **e).count() as i8
        };
        Some(Level9(label))
    }
}

impl Default for QuantBands {
    fn default() -> Self {
        Self::utilization_default()
    }
}

pub fn quantize9(kpi: &str, value: f64, bands: &QuantBands) -> Result<Level9, KpiError> {
    bands.level9(value).ok_or_else(|| KpiError::OutOfDomain {
        kpi: kpi.to_string(),
        value,
        lower: bands.lower,
        upper: bands.upper,
    })
}

pub fn map9to3(nine: i8) -> Result<Level3, KpiError> {
    Ok(Level9::new(nine)?.to_level3())
}

pub fn quantize3(kpi: &str, value: f64, bands: &QuantBands) -> Result<Level3, KpiError> {
    quantize9(kpi, value, bands).map(Level9::to_level3)
}

/// Per-KPI band lookup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandSet(IndexMap<String, QuantBands>);

impl BandSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kpi: impl Into<String>, bands: QuantBands) -> &mut Self {
        self.0.insert(kpi.into(), bands);
        self
    }

    pub fn with(mut self, kpi: impl Into<String>, bands: QuantBands) -> Self {
        self.insert(kpi, bands);
        self
    }

    pub fn get(&self, kpi: &str) -> Result<&QuantBands, KpiError> {
        self.0.get(kpi).ok_or_else(|| KpiError::MissingBands(kpi.to_string()))
    }

    pub fn contains(&self, kpi: &str) -> bool {
        self.0.contains_key(kpi)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &QuantBands)> {
        self.0.iter()
    }

    pub fn level3(&self, kpi: &KpiValue) -> Result<Level3, KpiError> {
        quantize3(&kpi.name, kpi.value, self.get(&kpi.name)?)
    }
}

/// Worst-case assessment: the minimum three-level severity over the vector.
/// An empty vector assesses as normal.
pub fn kleene_assess(kpis: &KpiVector, bands: &BandSet) -> Result<Level3, KpiError> {
    kpis.iter()
        .try_fold(Level3::Normal, |worst, kpi| Ok(worst.min(bands.level3(kpi)?)))
}

/// Kleene conjunction over already-classified levels.
pub fn kleene_min(levels: impl IntoIterator<Item = Level3>) -> Level3 {
    levels.into_iter().fold(Level3::Normal, Level3::min)
}
