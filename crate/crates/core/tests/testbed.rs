//! Simulated testbed: clock, probes, inventory and handler robustness.

use proptest::prelude::*;

use intent_assurance::policy::{parse_policy, ExecutionFeedback, Label, Policy, PolicyClass, Value, Verb};
use intent_assurance::testbed::{FaultEvent, SimEvent, Testbed, TestbedConfig, TestbedError, VmStatus, ZoneConfig};

const FULFILLMENT: [&str; 12] = [
    "M1 = (get, domain, zone=West, kpi=availability)",
    "M2 = (get, switch, zone=West)",
    "A1 = (compliance, domain, zone=West, availability=99.99, type=vm)",
    "A2 = (avail, vm, zone=West, count=2)",
    "E1 = (create, vm, zone=West, count=2, size=small, name=[collector_1, collector_2], image=ubuntu)",
    "E2 = (validate, [collector_1, collector_2], zone=West)",
    "E3 = (deploy, [collector_1, collector_2], service=collector, type=netflow, name=service_netflow)",
    "E4 = (configure, [collector_1, collector_2], service=service_netflow, source=M2, zone=West)",
    "E5 = (start, [collector_1, collector_2], service=service_netflow, zone=West)",
    "E6 = (healthcheck, service_netflow, output=App_1, name=health)",
    "E7 = (schedule, E6, frequency=hourly)",
    "E8 = (get, App_1, name=health, kpi=target)",
];

fn cases() -> ProptestConfig {
    ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

type History = Vec<(Policy, ExecutionFeedback)>;

fn run(tb: &mut Testbed, texts: &[&str], history: &mut History) {
    for text in texts {
        let p = parse_policy(text).unwrap();
        let out = tb.dispatch(&p, history);
        assert!(out.feedback.success, "{text}: {}", out.feedback);
        history.push((p, out.feedback));
    }
}

fn fulfilled(seed: u64) -> (Testbed, History) {
    let mut tb = Testbed::new(TestbedConfig {
        seed,
        ..TestbedConfig::default()
    })
    .unwrap();
    let mut history = Vec::new();
    run(&mut tb, &FULFILLMENT, &mut history);
    (tb, history)
}

fn small_left(tb: &Testbed) -> u32 {
    tb.zone("West").unwrap().inventory["small"]
}

#[test]
fn one_hour_of_monitoring() {
    let (mut tb, _) = fulfilled(0);
    tb.monitor("service_netflow").unwrap();
    let events = tb.advance_clock(3600).unwrap();
    let probes = events.iter().filter(|e| matches!(e, SimEvent::Probe { .. })).count();
    let checks = events
        .iter()
        .filter(|e| matches!(e, SimEvent::Healthcheck { .. }))
        .count();
    assert_eq!(probes, 60);
    assert_eq!(checks, 1);
    assert_eq!(tb.tracker().probes(), 60);
    assert_eq!(tb.tracker().unhealthy_probes(), 0);
}

#[test]
fn zero_advance_is_rejected() {
    let (mut tb, _) = fulfilled(0);
    let before = tb.now();
    assert!(matches!(tb.advance_clock(0), Err(TestbedError::NonPositiveAdvance)));
    assert_eq!(tb.now(), before);
}

#[test]
fn clock_moves_by_handler_duration() {
    let mut tb = Testbed::new(TestbedConfig::default()).unwrap();
    let mut history = Vec::new();
    for text in FULFILLMENT {
        let p = parse_policy(text).unwrap();
        let before = tb.now();
        let out = tb.dispatch(&p, &history);
        assert_eq!(out.started_at, before);
        assert_eq!(tb.now(), before + out.duration);
        history.push((p, out.feedback));
    }
    let sum: u64 = tb.trace().iter().map(|r| r.duration).sum();
    assert_eq!(sum, tb.now());
}

#[test]
fn start_needs_deploy_and_configure() {
    let mut tb = Testbed::new(TestbedConfig::default()).unwrap();
    let mut history = Vec::new();
    run(&mut tb, &FULFILLMENT[..6], &mut history);
    let start = parse_policy(FULFILLMENT[8]).unwrap();
    let out = tb.dispatch(&start, &history);
    assert!(!out.feedback.success);
    assert!(out.feedback.error_code().is_some(), "{}", out.feedback);

    run(&mut tb, &FULFILLMENT[6..7], &mut history);
    let out = tb.dispatch(&start, &history);
    assert!(!out.feedback.success);
    assert_eq!(out.feedback.error_code(), Some("bad_request"));

    run(&mut tb, &FULFILLMENT[7..9], &mut history);
    assert_eq!(tb.service("service_netflow").unwrap().running.len(), 2);
}

#[test]
fn shutdown_then_restart() {
    let (mut tb, history) = fulfilled(0);
    tb.inject_fault(&FaultEvent::shutdown(0, "collector_2")).unwrap();
    assert_eq!(tb.vm("collector_2").unwrap().status, VmStatus::Down);
    assert_eq!(tb.evaluate_service("service_netflow").unwrap().k_hs_pct, 50.0);

    let restart = parse_policy("E1 = (restart, collector_2)").unwrap();
    let out = tb.dispatch(&restart, &history);
    assert!(out.feedback.success, "{}", out.feedback);
    assert_eq!(out.duration, tb.config().timings.restart);
    assert!(tb.vm("collector_2").unwrap().is_active());
}

#[test]
fn persistent_fault_survives_restart_only() {
    let (mut tb, history) = fulfilled(0);
    tb.inject_fault(&FaultEvent::shutdown(0, "collector_2").persistent())
        .unwrap();
    let restart = parse_policy("E1 = (restart, collector_2)").unwrap();
    tb.dispatch(&restart, &history);
    assert!(!tb.vm("collector_2").unwrap().is_active());

    let before = small_left(&tb);
    let recreate = parse_policy("E2 = (recreate, collector_2)").unwrap();
    let out = tb.dispatch(&recreate, &history);
    assert!(out.feedback.success, "{}", out.feedback);
    assert!(tb.vm("collector_2").unwrap().is_active());
    assert_eq!(small_left(&tb), before);
}

#[test]
fn unknown_fault_target() {
    let (mut tb, _) = fulfilled(0);
    assert!(matches!(
        tb.inject_fault(&FaultEvent::shutdown(0, "collector_9")),
        Err(TestbedError::UnknownResource(_))
    ));
}

#[test]
fn empty_inventory_reports_no_capacity() {
    let mut zone = ZoneConfig::west();
    zone.inventory.clear();
    let mut tb = Testbed::new(TestbedConfig {
        zones: vec![zone],
        ..TestbedConfig::default()
    })
    .unwrap();
    let create = parse_policy(FULFILLMENT[4]).unwrap();
    let out = tb.dispatch(&create, &[]);
    assert_eq!(out.feedback.error_code(), Some("no_capacity"));
}

#[test]
fn same_seed_same_trace() {
    let (mut a, _) = fulfilled(7);
    let (mut b, _) = fulfilled(7);
    for tb in [&mut a, &mut b] {
        tb.monitor("service_netflow").unwrap();
        tb.schedule_fault(FaultEvent::shutdown(tb.now() + 1000, "collector_1"));
        tb.advance_clock(7200).unwrap();
    }
    assert_eq!(a.trace(), b.trace());
    assert_eq!(a.state(), b.state());
    assert_eq!(
        a.sample_metrics("collector_2").unwrap(),
        b.sample_metrics("collector_2").unwrap()
    );

    let (mut c, _) = fulfilled(8);
    let (mut d, _) = fulfilled(7);
    let seq = |tb: &mut Testbed| {
        (0..5)
            .map(|_| tb.sample_metrics("collector_2").unwrap())
            .collect::<Vec<_>>()
    };
    assert_ne!(seq(&mut c), seq(&mut d));
}

#[derive(Debug, Clone)]
enum Op {
    Create(u32),
    Recreate(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![(1u32..4).prop_map(Op::Create), (0usize..8).prop_map(Op::Recreate)]
}

fn atom() -> impl Strategy<Value = Value> {
    let names = [
        "vm",
        "domain",
        "switch",
        "collector_1",
        "collector_2",
        "service_netflow",
        "App_1",
        "West",
        "East",
        "small",
        "huge",
        "2",
        "0",
        "-1",
        "99.99",
        "hourly",
        "",
    ];
    prop_oneof![
        prop::sample::select(names.to_vec()).prop_map(Value::scalar),
        prop::collection::vec(prop::sample::select(names.to_vec()), 0..3).prop_map(Value::list),
        (1u32..10).prop_map(|i| Value::Ref(Label::new(PolicyClass::Execute, i))),
        (1u32..3).prop_map(|i| Value::Ref(Label::new(PolicyClass::Measure, i))),
    ]
}

fn random_policy() -> impl Strategy<Value = Policy> {
    let keys = [
        "zone",
        "count",
        "size",
        "name",
        "image",
        "service",
        "type",
        "source",
        "output",
        "frequency",
        "kpi",
        "availability",
    ];
    (
        prop::sample::select(Verb::ALL.to_vec()),
        atom(),
        prop::collection::vec((prop::sample::select(keys.to_vec()), atom()), 0..5),
    )
        .prop_map(|(verb, subject, params)| {
            params.into_iter().fold(
                Policy::new(Label::new(PolicyClass::Execute, 20), verb, subject),
                |p, (k, v)| p.param(k, v),
            )
        })
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn inventory_is_conserved(ops in prop::collection::vec(op(), 1..8)) {
        let mut tb = Testbed::new(TestbedConfig::default()).unwrap();
        let total = small_left(&tb);
        let mut made: Vec<String> = Vec::new();
        for o in ops {
            match o {
                Op::Create(n) => {
                    let names: Vec<String> = (0..n).map(|i| format!("vm_{}_{i}", made.len())).collect();
                    let p = Policy::new(Label::new(PolicyClass::Execute, 1), Verb::Create, Value::scalar("vm"))
                        .scalar_param("zone", "West")
                        .scalar_param("count", n.to_string())
                        .param("name", Value::list(names.clone()));
                    let out = tb.dispatch(&p, &[]);
                    if out.feedback.success {
                        made.extend(names);
                    }
                }
                Op::Recreate(i) => {
                    if made.is_empty() {
                        continue;
                    }
                    let before = small_left(&tb);
                    let name = made[i % made.len()].clone();
                    let p = Policy::new(Label::new(PolicyClass::Execute, 2), Verb::Recreate, Value::scalar(name));
                    prop_assert!(tb.dispatch(&p, &[]).feedback.success);
                    prop_assert_eq!(small_left(&tb), before);
                }
            }
            prop_assert_eq!(small_left(&tb) as usize + tb.state().vms.len(), total as usize);
        }
    }

    #[test]
    fn dispatch_never_panics(prefix in 0usize..=12, policies in prop::collection::vec(random_policy(), 1..4)) {
        let mut tb = Testbed::new(TestbedConfig::default()).unwrap();
        let mut history = Vec::new();
        run(&mut tb, &FULFILLMENT[..prefix], &mut history);
        for p in policies {
            let before = tb.now();
            let out = tb.dispatch(&p, &history);
            if !out.feedback.success {
                prop_assert!(out.feedback.error_code().is_some(), "{} -> {}", p, out.feedback);
            }
            prop_assert!(tb.now() >= before);
            history.push((p, out.feedback));
        }
    }
}
