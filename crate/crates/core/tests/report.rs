//! Report rendering.

use intent_assurance::report::{emit_report, parse_json, render_json, ReportFormat};
use intent_assurance::scenario::{execute, RunOptions, Scenario};

#[test]
fn json_round_trips() {
    let r = execute(&Scenario::netflow_west(), &RunOptions::default()).unwrap();
    let text = render_json(&r);
    assert!(text.ends_with('\n'));
    assert_eq!(parse_json(&text).unwrap(), r);
    assert_eq!(emit_report(&r, ReportFormat::Json), text);
}

#[test]
fn text_sections() {
    let r = execute(&Scenario::netflow_west(), &RunOptions::default()).unwrap();
    let text = emit_report(&r, ReportFormat::Text);
    for needle in [
        "Fulfillment policies (12)",
        "Assurance policies (4)",
        "Policy tree validated: no violations",
        "Assurance analysis (healthcheck at t = ",
        "Service KPIs",
        "Execution times",
        "Action downtime: restart 90 s, recreate 200 s",
        "final phase: assured",
    ] {
        assert!(text.contains(needle), "missing `{needle}` in\n{text}");
    }
    let kpi_row = text.lines().find(|l| l.starts_with("health k_Hs")).unwrap();
    let cells: Vec<&str> = kpi_row.split(" | ").map(str::trim).collect();
    assert!(cells[1].starts_with("100"), "{kpi_row}");
    assert!(cells[2].starts_with("50"), "{kpi_row}");
    assert!(cells[3].starts_with("100"), "{kpi_row}");
    let t_down = text.lines().find(|l| l.starts_with("t_down")).unwrap();
    assert!(t_down.ends_with("90 s"), "{t_down}");
}

#[test]
fn failed_run_still_renders() {
    let mut s = Scenario::netflow_west();
    s.run.horizon_hours = 2;
    s.zones[0].inventory.clear();
    let r = execute(&s, &RunOptions::default()).unwrap();
    let text = emit_report(&r, ReportFormat::Text);
    assert!(text.contains("Failure: "), "{text}");
    assert!(text.contains("Assurance policies (0)"));
    assert_eq!(parse_json(&render_json(&r)).unwrap(), r);
}

#[test]
fn format_names() {
    assert_eq!("text".parse::<ReportFormat>().unwrap(), ReportFormat::Text);
    assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    assert!("yaml".parse::<ReportFormat>().is_err());
}
