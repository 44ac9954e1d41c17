//! Static checks on a complete policy tree: omissions, ordering,
//! dangling references and attributes that contradict the intent.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FormalIntent, IntentType};
use crate::policy::{parse_fraction, Label, PolicyTree, Verb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Missing,
    Sequence,
    Reference,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub label: Option<Label>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            Some(l) => write!(f, "{:?} at {l}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, label: Option<Label>, message: String) {
        self.violations.push(Violation { kind, label, message });
    }
}

/// Each pair `(a, b)`: whenever `b` appears, `a` must appear before it.
const ORDER: [(Verb, Verb); 5] = [
    (Verb::Create, Verb::Validate),
    (Verb::Validate, Verb::Deploy),
    (Verb::Deploy, Verb::Configure),
    (Verb::Configure, Verb::Start),
    (Verb::Healthcheck, Verb::Schedule),
];

fn required_verbs(intent_type: IntentType, has_availability: bool) -> Vec<Verb> {
    let mut v = match intent_type {
        IntentType::CreateResource => vec![Verb::Create, Verb::Validate],
        IntentType::DeployService => vec![Verb::Deploy, Verb::Configure, Verb::Start],
        IntentType::DiscoverResource => vec![Verb::Get],
    };
    if has_availability && intent_type != IntentType::DiscoverResource {
        v.extend([Verb::Compliance, Verb::Healthcheck, Verb::Schedule]);
    }
    v
}

pub fn validate_tree(tree: &PolicyTree, intent: &FormalIntent, intent_type: IntentType) -> ValidationReport {
    let mut report = ValidationReport::default();
    let policies = tree.policies();
    let first = |verb: Verb| policies.iter().position(|p| p.verb == verb);

    for verb in required_verbs(intent_type, intent.get("Availability").is_some()) {
        if first(verb).is_none() {
            report.push(ViolationKind::Missing, None, format!("no `{verb}` policy"));
        }
    }

    for (a, b) in ORDER {
        if let Some(ib) = first(b) {
            if first(a).is_none_or(|ia| ia > ib) {
                report.push(
                    ViolationKind::Sequence,
                    Some(policies[ib].label),
                    format!("`{b}` is not preceded by `{a}`"),
                );
            }
        }
    }

    let mut seen: HashSet<Label> = HashSet::new();
    for p in policies {
        for r in p.references() {
            if !seen.contains(&r) {
                report.push(
                    ViolationKind::Reference,
                    Some(p.label),
                    format!("{r} is not an earlier policy"),
                );
            }
        }
        if !seen.insert(p.label) {
            report.push(ViolationKind::Reference, Some(p.label), "label used twice".into());
        }
    }

    check_attributes(tree, intent, &mut report);
    report
}

fn check_attributes(tree: &PolicyTree, intent: &FormalIntent, report: &mut ValidationReport) {
    let want_zone = intent.domain();
    let want_availability = intent.get("Availability").and_then(parse_fraction);
    let mut created: Option<HashSet<String>> = None;
    for p in tree.policies() {
        if let (Some(want), Some(got)) = (want_zone, p.get_str("zone")) {
            if want != got {
                report.push(
                    ViolationKind::Attribute,
                    Some(p.label),
                    format!("zone {got} does not match intent domain {want}"),
                );
            }
        }
        match p.verb {
            Verb::Compliance => {
                if let (Some(want), Some(got)) = (want_availability, p.get_fraction("availability")) {
                    if (want - got).abs() > 1e-12 {
                        report.push(
                            ViolationKind::Attribute,
                            Some(p.label),
                            format!("availability {got} does not match intent {want}"),
                        );
                    }
                }
            }
            Verb::Create => {
                let names = p.get("name").map(|v| v.items()).unwrap_or_default();
                if let Some(count) = p.get_u32("count") {
                    if count as usize != names.len() {
                        report.push(
                            ViolationKind::Attribute,
                            Some(p.label),
                            format!("count {count} but {} names", names.len()),
                        );
                    }
                }
                created.get_or_insert_with(HashSet::new).extend(names);
            }
            Verb::Validate | Verb::Deploy | Verb::Configure | Verb::Start => {
                if let Some(created) = &created {
                    for host in p.subject.items() {
                        if !created.contains(&host) {
                            report.push(
                                ViolationKind::Attribute,
                                Some(p.label),
                                format!("{host} was never created"),
                            );
                        }
                    }
                }
            }
            _ => {}
        }
    }
}
