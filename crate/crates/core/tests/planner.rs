//! Planner: tree validation, action ranking and the rule-based planner's
//! output on the bundled scenario.

use std::collections::HashSet;

use proptest::prelude::*;
use serde_json::Value as Json;

use intent_assurance::planner::{
    classify_intent, formalize_intent, select_action, validate_tree, ActionCandidate, FormalIntent, IntentType,
    ViolationKind,
};
use intent_assurance::policy::{parse_policy, Phase, PolicyTree, TreeError, Value, Verb};
use intent_assurance::scenario::{execute, RunOptions, Scenario};

const TREE: &str = "
M1 = (get, domain, zone=West, kpi=availability)
M2 = (get, switch, zone=West)
A1 = (compliance, domain, zone=West, availability=99.99, type=vm)
A2 = (avail, vm, zone=West, count=2)
E1 = (create, vm, zone=West, count=2, size=small, name=[collector_1, collector_2], image=ubuntu)
E2 = (validate, [collector_1, collector_2], zone=West)
E3 = (deploy, [collector_1, collector_2], service=collector, type=netflow, name=service_netflow)
E4 = (configure, [collector_1, collector_2], service=service_netflow, source=M2, zone=West)
E5 = (start, [collector_1, collector_2], service=service_netflow, zone=West)
E6 = (healthcheck, service_netflow, output=App_1, name=health)
E7 = (schedule, E6, frequency=hourly)
E8 = (get, App_1, name=health, kpi=target)
";

fn intent() -> (FormalIntent, IntentType) {
    let text = Scenario::netflow_west().intent;
    (formalize_intent(&text).unwrap(), classify_intent(&text).unwrap())
}

fn tree_without(skip: &str) -> PolicyTree {
    let text: Vec<&str> = TREE.lines().filter(|l| !l.starts_with(skip)).collect();
    PolicyTree::parse(Phase::Fulfillment, &text.join("\n")).unwrap()
}

#[test]
fn reference_tree_is_valid() {
    let (formal, kind) = intent();
    let tree = PolicyTree::parse(Phase::Fulfillment, TREE).unwrap();
    let report = validate_tree(&tree, &formal, kind);
    assert!(report.is_valid(), "{:?}", report.violations);
}

#[test]
fn deploy_without_validate_is_a_sequence_violation() {
    let (formal, kind) = intent();
    let report = validate_tree(&tree_without("E2 "), &formal, kind);
    let seq: Vec<_> = report.of_kind(ViolationKind::Sequence).collect();
    assert_eq!(seq.len(), 1, "{:?}", report.violations);
    assert_eq!(seq[0].label.unwrap().to_string(), "E3");
    assert!(report
        .of_kind(ViolationKind::Missing)
        .any(|v| v.message.contains("validate")));
}

#[test]
fn wrong_zone_is_an_attribute_violation() {
    let (formal, kind) = intent();
    let text = TREE.replace("E1 = (create, vm, zone=West", "E1 = (create, vm, zone=East");
    let tree = PolicyTree::parse(Phase::Fulfillment, &text).unwrap();
    let report = validate_tree(&tree, &formal, kind);
    let attr: Vec<_> = report.of_kind(ViolationKind::Attribute).collect();
    assert_eq!(attr.len(), 1, "{:?}", report.violations);
    assert_eq!(attr[0].label.unwrap().to_string(), "E1");
}

#[test]
fn wrong_availability_is_an_attribute_violation() {
    let (formal, kind) = intent();
    let text = TREE.replace("availability=99.99", "availability=99.9");
    let tree = PolicyTree::parse(Phase::Fulfillment, &text).unwrap();
    let report = validate_tree(&tree, &formal, kind);
    assert!(report
        .of_kind(ViolationKind::Attribute)
        .any(|v| v.label.unwrap().to_string() == "A1"));
}

#[test]
fn forward_reference_is_rejected() {
    let mut policies: Vec<_> = TREE
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with("M2 "))
        .map(|l| parse_policy(l).unwrap())
        .collect();
    policies.push(parse_policy("M2 = (get, switch, zone=West)").unwrap());
    match PolicyTree::from_policies(Phase::Fulfillment, policies) {
        Err(TreeError::ForwardReference { from, to }) => {
            assert_eq!(from.to_string(), "E4");
            assert_eq!(to.to_string(), "M2");
        }
        other => panic!("expected a forward reference, got {other:?}"),
    }
}

#[test]
fn duplicate_label_is_rejected() {
    let text = format!("{TREE}\nE8 = (get, App_1, name=health, kpi=target)");
    assert!(PolicyTree::parse(Phase::Fulfillment, &text).is_err());
}

#[test]
fn every_executed_policy_round_trips() {
    let r = execute(&Scenario::netflow_west(), &RunOptions::default()).unwrap();
    let all: Vec<_> = r.fulfillment.iter().chain(r.assurance_policies()).collect();
    assert_eq!(all.len(), 16);
    for rec in all {
        assert_eq!(parse_policy(&rec.text).unwrap(), rec.policy, "{}", rec.text);
        assert_eq!(parse_policy(&rec.policy.to_string()).unwrap(), rec.policy);
    }
}

fn strings(j: &Json, out: &mut HashSet<String>) {
    match j {
        Json::String(s) => {
            out.insert(s.clone());
        }
        Json::Array(v) => v.iter().for_each(|x| strings(x, out)),
        Json::Object(m) => m.iter().for_each(|(k, v)| {
            out.insert(k.clone());
            strings(v, out);
        }),
        _ => {}
    }
}

#[test]
fn rule_planner_only_names_known_entities() {
    let r = execute(&Scenario::netflow_west(), &RunOptions::default()).unwrap();
    let mut known: HashSet<String> = HashSet::new();
    for rec in r.fulfillment.iter().chain(r.assurance_policies()) {
        let p = &rec.policy;
        let acts_on_instances = matches!(
            p.verb,
            Verb::Validate | Verb::Deploy | Verb::Configure | Verb::Start | Verb::Restart | Verb::Recreate
        ) || (p.verb == Verb::Get
            && !matches!(p.subject.as_scalar(), Some("domain" | "switch" | "vm")));
        if acts_on_instances {
            if let Value::Scalar(_) | Value::List(_) = p.subject {
                for name in p.subject.items() {
                    assert!(known.contains(&name), "{} names unknown `{name}`", rec.text);
                }
            }
        }
        for key in ["name", "output", "service"] {
            if let Some(v) = p.get(key) {
                known.extend(v.items());
            }
        }
        strings(&rec.feedback.state, &mut known);
    }
}

fn candidate(name: String, weight: f64, magnitude: f64, sufficient: bool, excluded: bool) -> ActionCandidate {
    ActionCandidate {
        name,
        weight,
        magnitude,
        penalty: weight * magnitude,
        duration: 0,
        sufficient,
        excluded,
    }
}

fn pool() -> impl Strategy<Value = (Vec<(u8, bool, bool)>, u8)> {
    (
        prop::collection::vec((1u8..20, any::<bool>(), prop::bool::weighted(0.2)), 1..6),
        0u8..=4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn selection_is_the_cheapest_usable_action((spec, level_gap) in pool()) {
        let magnitude = 2.0 * f64::from(level_gap);
        let cands: Vec<_> = spec
            .iter()
            .enumerate()
            .map(|(i, (w, s, x))| candidate(format!("a{i}"), f64::from(*w), magnitude, *s, *x))
            .collect();
        let usable: Vec<&ActionCandidate> = cands.iter().filter(|c| c.sufficient && !c.excluded).collect();
        match select_action(&cands) {
            Ok(chosen) => {
                prop_assert!(chosen.sufficient && !chosen.excluded);
                prop_assert!(usable.iter().all(|c| chosen.penalty <= c.penalty));
                let first = usable.iter().find(|c| c.penalty == chosen.penalty).unwrap();
                prop_assert_eq!(&first.name, &chosen.name);
            }
            Err(_) => prop_assert!(usable.is_empty()),
        }
    }

    #[test]
    fn selection_ignores_weight_scale(
        (spec, level_gap) in pool(),
        scale in prop::sample::select(vec![0.125, 0.25, 0.5, 2.0, 3.0, 10.0, 64.0]),
    ) {
        let magnitude = 2.0 * f64::from(level_gap.max(1));
        let build = |k: f64| -> Vec<ActionCandidate> {
            spec.iter()
                .enumerate()
                .map(|(i, (w, s, x))| candidate(format!("a{i}"), f64::from(*w) * k, magnitude, *s, *x))
                .collect()
        };
        let (a, b) = (build(1.0), build(scale));
        let pick = |c: &[ActionCandidate]| select_action(c).map(|x| x.name.clone()).ok();
        prop_assert_eq!(pick(&a), pick(&b));
    }
}
