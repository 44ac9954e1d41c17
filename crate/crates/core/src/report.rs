//! Text and JSON renderings of a [`ScenarioResult`].
//!
//! Every number shown is read from the result; nothing is recomputed here.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assurance::{Correction, DriftEntry, KpiObservation, PolicyRecord, ScenarioResult};
use crate::health::{SubServiceHealth, RESOURCE_KPIS};
use crate::testbed::{fmt_fraction_pct, fmt_pct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected text or json)")),
        }
    }
}

pub fn emit_report(result: &ScenarioResult, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(result),
        ReportFormat::Json => render_json(result),
    }
}

pub fn render_json(result: &ScenarioResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("results serialize");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> serde_json::Result<ScenarioResult> {
    serde_json::from_str(text)
}

/// Left-aligned columns separated by ` | `.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: ToString>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(ToString::to_string).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn render(&self, out: &mut String) {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (i, c) in r.iter().enumerate().take(cols) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = (0..cols)
                .map(|i| {
                    let c = cells.get(i).map(String::as_str).unwrap_or("");
                    format!("{c:<w$}", w = width[i])
                })
                .collect();
            out.push_str(parts.join(" | ").trim_end());
            out.push('\n');
        };
        line(&self.header, out);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("-+-"));
        out.push('\n');
        for r in &self.rows {
            line(r, out);
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn policy_rows(t: &mut Table, records: &[PolicyRecord]) {
    for r in records {
        t.row(vec![
            r.policy.label.to_string(),
            r.text.split_once(" = ").map_or(r.text.clone(), |(_, p)| p.to_string()),
            r.feedback_text.clone(),
            format!("{}", r.sim_time),
            format!("{}", r.duration),
        ]);
    }
}

fn render_text(r: &ScenarioResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Intent: {}", r.intent);
    let _ = writeln!(
        out,
        "Scenario: {}  seed: {}  planner: {}  final phase: {}",
        r.scenario, r.seed, r.planner, r.final_phase
    );
    if let Some(f) = &r.failure {
        let _ = writeln!(out, "Failure: {f}");
    }
    for w in &r.warnings {
        let _ = writeln!(out, "Warning: {w}");
    }

    let _ = writeln!(out, "\nFulfillment policies ({})", r.fulfillment.len());
    let mut t = Table::new(&["label", "policy", "feedback", "t (s)", "dur (s)"]);
    policy_rows(&mut t, &r.fulfillment);
    t.render(&mut out);
    if let Some(v) = &r.validation {
        if v.is_valid() {
            out.push_str("Policy tree validated: no violations\n");
        } else {
            for violation in &v.violations {
                let _ = writeln!(out, "Violation: {violation}");
            }
        }
    }

    let assurance: Vec<PolicyRecord> = r.assurance_policies().cloned().collect();
    let _ = writeln!(out, "\nAssurance policies ({})", assurance.len());
    let mut t = Table::new(&["label", "policy", "feedback", "t (s)", "dur (s)"]);
    policy_rows(&mut t, &assurance);
    t.render(&mut out);

    for c in &r.corrections {
        analysis_table(r, c, &mut out);
    }

    kpi_table(r, &mut out);
    timing_table(r, &mut out);

    let _ = writeln!(
        out,
        "\nOutcome: {} probes ({} unhealthy), {} healthchecks, service downtime {} s, availability {} over {} h{}, intent_health {}",
        r.probes,
        r.unhealthy_probes,
        r.healthchecks,
        r.service_downtime_s,
        num(r.availability),
        r.horizon_s / 3600,
        r.downtime_budget_s
            .map(|b| format!(" (downtime budget {} s)", num(b)))
            .unwrap_or_default(),
        r.intent_health
    );
    out
}

fn analysis_table(r: &ScenarioResult, c: &Correction, out: &mut String) {
    let Some(entry): Option<&DriftEntry> = r.drift_trace.get(c.trigger) else {
        return;
    };
    let _ = writeln!(out, "\nAssurance analysis (healthcheck at t = {} s)", entry.at);
    let mut header: Vec<String> = [
        "resource", "cpu", "ram", "storage", "s_net", "s_r", "h_r", "h_sw", "h_a",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(c.candidates.iter().map(|a| a.name.clone()));
    let mut t = Table::new(&header);
    let chosen = c.attempts.iter().find(|a| a.succeeded).map(|a| a.action.as_str());

    for sub in &entry.snapshot.subservices {
        t.row(subservice_row(sub, c, chosen));
        let Some(drift) = c.analysis.iter().find(|d| d.name == sub.name) else {
            continue;
        };
        let mut row = vec!["  ∇E".to_string()];
        row.extend(
            RESOURCE_KPIS
                .iter()
                .map(|k| drift.resource.delta.get(k).map_or_else(String::new, num)),
        );
        row.push(format!("min → {}", drift.combined));
        row.push(format!("∇ = {}", num(drift.gradient)));
        row.push(String::new());
        if drift.name == c.subservice.name {
            row.extend(c.candidates.iter().map(|a| format!("P = {}", num(a.penalty))));
        }
        t.row(row);
    }
    t.render(out);
    for a in &c.attempts {
        let _ = writeln!(
            out,
            "Action {}: {}{}",
            a.action,
            if a.succeeded { "succeeded" } else { "failed" },
            if a.note.is_empty() {
                String::new()
            } else {
                format!(" ({})", a.note)
            }
        );
    }
}

fn subservice_row(sub: &SubServiceHealth, c: &Correction, chosen: Option<&str>) -> Vec<String> {
    let mut row = vec![sub.name.clone()];
    row.extend(sub.metrics.values().map(fmt_pct));
    row.extend([sub.resource, sub.software, sub.agents].iter().map(|l| l.to_string()));
    let target = sub.name == c.subservice.name;
    row.extend(c.candidates.iter().map(|a| {
        if !target {
            "n/a".to_string()
        } else if Some(a.name.as_str()) == chosen {
            "✓".to_string()
        } else {
            "✗".to_string()
        }
    }));
    row
}

fn observation(o: Option<&KpiObservation>, health: bool) -> String {
    match o {
        None => "-".into(),
        Some(o) if health => format!("{} (∇ = {})", fmt_pct(o.health_pct), num(o.health_gradient)),
        Some(o) => format!("{} (∇ = {})", num(o.availability), num(o.availability_gradient)),
    }
}

fn kpi_table(r: &ScenarioResult, out: &mut String) {
    let k = &r.kpis;
    out.push_str("\nService KPIs\n");
    let mut t = Table::new(&["kpi", "target", "t1 (drift detected)", "t2 (intent assured)"]);
    t.row(vec![
        "health k_Hs".into(),
        fmt_pct(k.target_health_pct),
        observation(k.t1.as_ref(), true),
        observation(k.t2.as_ref(), true),
    ]);
    t.row(vec![
        "availability k_As".into(),
        k.target_availability.map_or("-".into(), num),
        observation(k.t1.as_ref(), false),
        observation(k.t2.as_ref(), false),
    ]);
    t.row(vec![
        "t_down".into(),
        String::new(),
        String::new(),
        if k.t2.is_some() {
            format!("{} s", k.t_down)
        } else {
            "-".into()
        },
    ]);
    t.row(vec![
        "final".into(),
        String::new(),
        String::new(),
        format!(
            "health {}, availability {}",
            k.final_health_pct.map_or("-".into(), fmt_pct),
            fmt_fraction_pct(k.final_availability)
        ),
    ]);
    t.render(out);
    if let Some(c) = r.corrections.first() {
        let alts: Vec<String> = c
            .candidates
            .iter()
            .map(|a| format!("{} {} s", a.name, a.duration))
            .collect();
        let _ = writeln!(out, "Action downtime: {}", alts.join(", "));
    }
}

fn timing_table(r: &ScenarioResult, out: &mut String) {
    let tm = &r.timings;
    out.push_str("\nExecution times\n");
    let mut t = Table::new(&["", "fulfillment", "assurance", "total"]);
    t.row(vec![
        "policies".into(),
        tm.fulfillment_policies.to_string(),
        tm.assurance_policies.to_string(),
        (tm.fulfillment_policies + tm.assurance_policies).to_string(),
    ]);
    t.row(vec![
        "testbed, simulated (s)".into(),
        tm.fulfillment_testbed_s.to_string(),
        tm.assurance_testbed_s.to_string(),
        tm.total_testbed_s.to_string(),
    ]);
    let secs = |x: Option<f64>| x.map_or("-".to_string(), |s| format!("{s:.3}"));
    let total = match (tm.fulfillment_planner_s, tm.assurance_planner_s) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
    };
    t.row(vec![
        "planner, wall clock (s)".into(),
        secs(tm.fulfillment_planner_s),
        secs(tm.assurance_planner_s),
        secs(total),
    ]);
    t.render(out);
}
