//! Deterministic phase scripts.
//!
//! Fulfillment: query the domain, size the redundancy, allocate, then bring
//! the service up and schedule its healthcheck. Assurance: read the
//! operational KPIs, apply the chosen corrective action, re-validate and
//! restart the service on the repaired resource. Each step reads what it
//! needs from the feedback of earlier steps.

use serde_json::Value as Json;

use super::{retry_or_abort, FormalIntent, IntentType, Planner, PlannerContext, PlannerError};
use crate::policy::{Label, Phase, Policy, PolicyClass, Value, Verb};

#[derive(Debug, Clone, Default)]
pub struct RulePlanner;

impl RulePlanner {
    pub fn new() -> Self {
        Self
    }
}

impl Planner for RulePlanner {
    fn formalize(&mut self, text: &str) -> Result<FormalIntent, PlannerError> {
        super::formalize_intent(text)
    }

    fn classify(&mut self, text: &str) -> Result<IntentType, PlannerError> {
        super::classify_intent(text)
    }

    fn next_policy(&mut self, ctx: &PlannerContext) -> Result<Option<Policy>, PlannerError> {
        if let Some(r) = retry_or_abort(ctx) {
            return r.map(Some);
        }
        match ctx.phase {
            Phase::Fulfillment => fulfillment_step(ctx),
            Phase::Assurance => assurance_step(ctx),
        }
    }
}

/// Names the rule scripts derive from a formalized intent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServicePlan {
    pub zone: String,
    pub host_prefix: String,
    pub data_type: String,
    pub service: String,
    pub app: String,
}

impl ServicePlan {
    pub fn from_intent(f: &FormalIntent) -> Result<Self, PlannerError> {
        let zone = f.domain().ok_or(PlannerError::MissingContext("Domain"))?.to_string();
        let noun = f
            .get("Task")
            .and_then(|t| t.split_whitespace().last())
            .unwrap_or("collectors")
            .to_lowercase();
        let host_prefix = noun.strip_suffix('s').unwrap_or(&noun).to_string();
        let data_type = f.get("Data Type").unwrap_or("netflow").to_lowercase();
        Ok(Self {
            zone,
            service: format!("service_{data_type}"),
            host_prefix,
            data_type,
            app: "App_1".into(),
        })
    }
}

fn successes(ctx: &PlannerContext) -> Vec<&(Policy, crate::policy::ExecutionFeedback)> {
    ctx.history.iter().filter(|(_, f)| f.success).collect()
}

fn s(v: &str) -> Value {
    Value::scalar(v)
}

fn fulfillment_step(ctx: &PlannerContext) -> Result<Option<Policy>, PlannerError> {
    let plan = ServicePlan::from_intent(&ctx.formal)?;
    let done = successes(ctx);
    let m = |ctx: &PlannerContext| ctx.next_label(PolicyClass::Measure);
    let a = |ctx: &PlannerContext| ctx.next_label(PolicyClass::Analyze);
    let e = |ctx: &PlannerContext| ctx.next_label(PolicyClass::Execute);
    let zone = s(&plan.zone);

    if ctx.intent_type == IntentType::DiscoverResource {
        return Ok(match done.len() {
            0 => Some(Policy::new(m(ctx), Verb::Get, s("domain")).param("zone", zone)),
            1 => Some(Policy::new(m(ctx), Verb::Get, s("switch")).param("zone", zone)),
            _ => None,
        });
    }

    let hosts = || -> Result<Vec<String>, PlannerError> {
        let (_, fb) = done.get(4).ok_or(PlannerError::MissingContext("create feedback"))?;
        let names: Vec<String> = fb
            .state
            .as_array()
            .ok_or(PlannerError::MissingContext("created host list"))?
            .iter()
            .filter_map(|h| h.get("name").and_then(Json::as_str).map(str::to_string))
            .collect();
        if names.is_empty() {
            return Err(PlannerError::MissingContext("created host list"));
        }
        Ok(names)
    };
    let label_of = |step: usize| done.get(step).map(|(p, _)| p.label);

    let policy = match done.len() {
        0 => Policy::new(m(ctx), Verb::Get, s("domain"))
            .param("zone", zone)
            .scalar_param("kpi", "availability"),
        1 => Policy::new(m(ctx), Verb::Get, s("switch")).param("zone", zone),
        2 => {
            let availability = ctx
                .formal
                .get("Availability")
                .ok_or(PlannerError::MissingContext("Availability"))?;
            Policy::new(a(ctx), Verb::Compliance, s("domain"))
                .param("zone", zone)
                .scalar_param("availability", availability.trim_end_matches('%').trim())
                .scalar_param("type", "vm")
        }
        3 => {
            let count = feedback_count(&done[2].1.state)?;
            Policy::new(a(ctx), Verb::Avail, s("vm"))
                .param("zone", zone)
                .scalar_param("count", count.to_string())
        }
        4 => {
            let count = feedback_count(&done[2].1.state)?;
            // With nothing large enough, ask anyway and let the testbed refuse.
            let size = smallest_size_with(&done[3].1.state, count)
                .or_else(|| first_size(&done[3].1.state))
                .unwrap_or_else(|| "small".into());
            let names: Vec<String> = (1..=count).map(|i| format!("{}_{i}", plan.host_prefix)).collect();
            Policy::new(e(ctx), Verb::Create, s("vm"))
                .param("zone", zone)
                .scalar_param("count", count.to_string())
                .scalar_param("size", size)
                .param("name", Value::List(names))
                .scalar_param("image", "ubuntu")
        }
        5 => Policy::new(e(ctx), Verb::Validate, Value::List(hosts()?)).param("zone", zone),
        6 => Policy::new(e(ctx), Verb::Deploy, Value::List(hosts()?))
            .scalar_param("service", &plan.host_prefix)
            .scalar_param("type", &plan.data_type)
            .scalar_param("name", &plan.service),
        7 => Policy::new(e(ctx), Verb::Configure, Value::List(hosts()?))
            .scalar_param("service", &plan.service)
            .param("source", Value::Ref(label_of(1).expect("step 1 done")))
            .param("zone", zone),
        8 => Policy::new(e(ctx), Verb::Start, Value::List(hosts()?))
            .scalar_param("service", &plan.service)
            .param("zone", zone),
        9 => Policy::new(e(ctx), Verb::Healthcheck, s(&plan.service))
            .scalar_param("output", &plan.app)
            .scalar_param("name", "health"),
        10 => Policy::new(e(ctx), Verb::Schedule, Value::Ref(label_of(9).expect("step 9 done")))
            .scalar_param("frequency", "hourly"),
        11 => Policy::new(e(ctx), Verb::Get, s(&plan.app))
            .scalar_param("name", "health")
            .scalar_param("kpi", "target"),
        _ => return Ok(None),
    };
    Ok(Some(policy))
}

fn feedback_count(state: &Json) -> Result<u32, PlannerError> {
    state
        .get("count")
        .and_then(Json::as_u64)
        .and_then(|c| u32::try_from(c).ok())
        .filter(|c| *c > 0)
        .ok_or(PlannerError::MissingContext("redundancy count"))
}

/// First size in inventory order with at least `count` units left.
fn smallest_size_with(inventory: &Json, count: u32) -> Option<String> {
    inventory.as_array()?.iter().find_map(|row| {
        let left = row.get("count")?.as_u64()?;
        (left >= u64::from(count)).then(|| row.get("size")?.as_str().map(str::to_string))?
    })
}

fn first_size(inventory: &Json) -> Option<String> {
    inventory.as_array()?.first()?.get("size")?.as_str().map(str::to_string)
}

fn assurance_step(ctx: &PlannerContext) -> Result<Option<Policy>, PlannerError> {
    let brief = ctx
        .brief
        .as_ref()
        .ok_or(PlannerError::MissingContext("assurance brief"))?;
    let done = successes(ctx).len();
    let label: Label = ctx.next_label(PolicyClass::Execute);
    let resource = s(&brief.resource);
    let zone = s(&brief.zone);
    let policy = match done {
        0 => Policy::new(label, Verb::Get, s(&brief.app))
            .scalar_param("name", "health")
            .scalar_param("kpi", "operational"),
        1 => {
            let verb = brief
                .action
                .parse::<Verb>()
                .map_err(|()| PlannerError::MissingContext("known action verb"))?;
            Policy::new(label, verb, resource).param("zone", zone)
        }
        2 => Policy::new(label, Verb::Validate, resource).param("zone", zone),
        3 => Policy::new(label, Verb::Start, resource)
            .scalar_param("service", &brief.service)
            .param("zone", zone),
        _ => return Ok(None),
    };
    Ok(Some(policy))
}
