//! Rule-based intent formalization, KPI extraction and classification.

use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::kpi::{KpiValue, KpiVector, Unit};
use crate::policy::parse_fraction;

pub const KPI_AVAILABILITY: &str = "availability";

/// Ordered `key: value` view of an intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalIntent {
    pub fields: IndexMap<String, String>,
    pub source: String,
}

impl FormalIntent {
    pub fn new(source: &str) -> Self {
        Self {
            fields: IndexMap::new(),
            source: source.to_string(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn domain(&self) -> Option<&str> {
        self.get("Domain")
    }

    /// Parses `key: value` lines, ignoring blank lines and bullets.
    pub fn parse_lines(source: &str, text: &str) -> Result<Self, PlannerError> {
        let mut out = Self::new(source);
        for line in text.lines() {
            let line = line.trim().trim_start_matches(['-', '*']).trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once(':') else {
                return Err(PlannerError::Formalization { raw: text.to_string() });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() || out.fields.contains_key(k) {
                return Err(PlannerError::Formalization { raw: text.to_string() });
            }
            out.fields.insert(k.to_string(), v.to_string());
        }
        if out.fields.is_empty() {
            return Err(PlannerError::Formalization { raw: text.to_string() });
        }
        Ok(out)
    }
}

impl fmt::Display for FormalIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentType {
    CreateResource,
    DeployService,
    DiscoverResource,
}

impl IntentType {
    pub const ALL: [IntentType; 3] = [
        IntentType::CreateResource,
        IntentType::DeployService,
        IntentType::DiscoverResource,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentType::CreateResource => "create_resource",
            IntentType::DeployService => "deploy_service",
            IntentType::DiscoverResource => "discover_resource",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s.trim())
    }
}

impl fmt::Display for IntentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

struct Patterns {
    domain: [Regex; 2],
    task: Regex,
    data: Regex,
    availability: [Regex; 2],
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        domain: [
            Regex::new(r"\b(?i:domain|zone)\s+([A-Z][\w-]*)").unwrap(),
            Regex::new(r"\bin\s+([A-Z][\w-]*)").unwrap(),
        ],
        task: Regex::new(r"(?i)^\s*((?:create|deploy|discover|provision|find|list)\s+(?:all\s+)?[\w-]+)").unwrap(),
        data: Regex::new(r"(?i)\b(?:gathering|collecting|collect)\s+([\w-]+)\s+data\b").unwrap(),
        availability: [
            Regex::new(r"(?i)(\d+(?:\.\d+)?)\s*%\s*availability").unwrap(),
            Regex::new(r"(?i)availability\s*(?:of\s*|=\s*|:\s*)?(\d+(?:\.\d+)?)\s*%").unwrap(),
        ],
    })
}

/// Extracts Domain, Task, Data Type and Availability from one of the
/// supported intent phrasings.
pub fn formalize_intent(text: &str) -> Result<FormalIntent, PlannerError> {
    if text.trim().is_empty() {
        return Err(PlannerError::EmptyIntent);
    }
    let p = patterns();
    let mut out = FormalIntent::new(text);
    if let Some(c) = p.domain.iter().find_map(|r| r.captures(text)) {
        out.fields.insert("Domain".into(), c[1].to_string());
    }
    if let Some(c) = p.task.captures(text) {
        out.fields.insert("Task".into(), capitalize(&c[1]));
    }
    if let Some(c) = p.data.captures(text) {
        out.fields.insert("Data Type".into(), c[1].to_string());
    }
    if let Some(c) = p.availability.iter().find_map(|r| r.captures(text)) {
        out.fields.insert("Availability".into(), format!("{}%", &c[1]));
    }
    if out.fields.is_empty() {
        return Err(PlannerError::Formalization { raw: text.to_string() });
    }
    Ok(out)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Numeric objectives of the intent as a target vector. Percentages become
/// fractions. Fields that carry no objective are reported as warnings.
pub fn extract_kpis(intent: &FormalIntent) -> (KpiVector, Vec<String>) {
    let mut v = KpiVector::target();
    let mut warnings = Vec::new();
    for (key, raw) in &intent.fields {
        if !key.eq_ignore_ascii_case(KPI_AVAILABILITY) {
            continue;
        }
        match parse_fraction(raw).and_then(|f| KpiValue::new(KPI_AVAILABILITY, f, Unit::Fraction).ok()) {
            Some(kv) => {
                let _ = v.push(kv);
            }
            None => warnings.push(format!("{key} value `{raw}` is not a valid availability")),
        }
    }
    if v.is_empty() {
        warnings.push("intent carries no recognizable KPI".into());
    }
    (v, warnings)
}

/// Keyword classification. Creation wins over deployment when both
/// appear, since the service cannot be deployed before its hosts exist.
pub fn classify_intent(text: &str) -> Result<IntentType, PlannerError> {
    if text.trim().is_empty() {
        return Err(PlannerError::EmptyIntent);
    }
    let lower = text.to_lowercase();
    let has = |words: &[&str]| lower.split(|c: char| !c.is_alphanumeric()).any(|w| words.contains(&w));
    if has(&["discover", "find", "list"]) {
        Ok(IntentType::DiscoverResource)
    } else if has(&["create", "provision"]) {
        Ok(IntentType::CreateResource)
    } else if has(&["deploy", "install"]) {
        Ok(IntentType::DeployService)
    } else {
        Err(PlannerError::UnknownType(text.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: &str = "Create collectors in Domain West for gathering Netflow data in the domain, such that the collectors have 99.99% availability";

    #[test]
    fn formalizes_worked_example() {
        let f = formalize_intent(WORKED).unwrap();
        let pairs: Vec<(&str, &str)> = f.fields.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        assert_eq!(
            pairs,
            vec![
                ("Domain", "West"),
                ("Task", "Create collectors"),
                ("Data Type", "Netflow"),
                ("Availability", "99.99%"),
            ]
        );
        let east = formalize_intent(&WORKED.replace("West", "East")).unwrap();
        assert_eq!(east.domain(), Some("East"));
    }

    #[test]
    fn empty_and_gibberish() {
        assert!(matches!(formalize_intent("  "), Err(PlannerError::EmptyIntent)));
        assert!(matches!(
            classify_intent("qwzx blorp"),
            Err(PlannerError::UnknownType(_))
        ));
    }

    #[test]
    fn kpis() {
        let (v, w) = extract_kpis(&formalize_intent(WORKED).unwrap());
        assert_eq!(v.value(KPI_AVAILABILITY), Some(0.9999));
        assert!(w.is_empty());
        let (v, w) = extract_kpis(&FormalIntent::new("x").with("Availability", "99.9%"));
        assert_eq!(v.value(KPI_AVAILABILITY), Some(0.999));
        assert!(w.is_empty());
        let (v, w) = extract_kpis(&FormalIntent::new("x").with("Domain", "West"));
        assert!(v.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn classification() {
        assert_eq!(classify_intent(WORKED).unwrap(), IntentType::CreateResource);
        assert_eq!(
            classify_intent("discover all switches in West").unwrap(),
            IntentType::DiscoverResource
        );
        assert_eq!(
            classify_intent("deploy a netflow service on the collectors").unwrap(),
            IntentType::DeployService
        );
    }

    #[test]
    fn line_parsing() {
        let f = FormalIntent::parse_lines("s", "Domain: West\n- Availability: 99.99%\n").unwrap();
        assert_eq!(f.get("Availability"), Some("99.99%"));
        assert!(FormalIntent::parse_lines("s", "no pairs here").is_err());
        assert!(FormalIntent::parse_lines("s", "").is_err());
    }
}
