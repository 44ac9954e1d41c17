//! Verb handlers. Every handler either succeeds with a state document or
//! fails with `{error: not_found | no_capacity | bad_request}`; nothing
//! panics or propagates through [`Testbed::dispatch`].

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::{
    fmt_fraction_pct, fmt_pct, Schedule, Service, ServiceStatus, SimEvent, Testbed, TraceRecord, Vm, VmFaults, VmStatus,
};
use crate::availability::{required_redundancy, service_availability};
use crate::policy::{ExecutionFeedback, Policy, Value, Verb};

const NOT_FOUND: &str = "not_found";
const NO_CAPACITY: &str = "no_capacity";
const BAD_REQUEST: &str = "bad_request";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchOutcome {
    pub feedback: ExecutionFeedback,
    pub started_at: u64,
    pub duration: u64,
    pub events: Vec<SimEvent>,
}

enum Completion {
    Boot(Vec<String>),
    Restart(String),
    Recreate(String),
}

struct Handled {
    feedback: ExecutionFeedback,
    duration: u64,
    completion: Option<Completion>,
}

type HandlerResult = Result<Handled, ExecutionFeedback>;

fn fail(code: &str) -> ExecutionFeedback {
    ExecutionFeedback::error(code)
}

impl Testbed {
    /// Executes one policy. `history` is the tree executed so far, used to
    /// resolve label references such as `source=M2` or `schedule E6`.
    pub fn dispatch(&mut self, policy: &Policy, history: &[(Policy, ExecutionFeedback)]) -> DispatchOutcome {
        let started_at = self.state.clock;
        let handled = self.handle(policy, history).unwrap_or_else(|feedback| Handled {
            feedback,
            duration: self.config.timings.query,
            completion: None,
        });
        let mut feedback = handled.feedback;
        let mut events = Vec::new();
        if handled.duration > 0 {
            match self.advance_clock(handled.duration) {
                Ok(e) => events = e,
                Err(e) => feedback = ExecutionFeedback::fail(json!({ "error": "internal", "detail": e.to_string() })),
            }
        }
        if let Some(done) = handled.completion.and_then(|c| self.complete(c)) {
            if feedback.success {
                feedback = done;
            }
        }
        let duration = self.state.clock - started_at;
        self.record(TraceRecord {
            policy: policy.clone(),
            feedback: feedback.clone(),
            sim_time: started_at,
            duration,
        });
        DispatchOutcome {
            feedback,
            started_at,
            duration,
            events,
        }
    }

    fn handle(&mut self, p: &Policy, history: &[(Policy, ExecutionFeedback)]) -> HandlerResult {
        match p.verb {
            Verb::Get => self.h_get(p),
            Verb::Compliance => self.h_compliance(p),
            Verb::Avail => self.h_avail(p),
            Verb::Create => self.h_create(p),
            Verb::Validate => self.h_validate(p),
            Verb::Deploy => self.h_deploy(p),
            Verb::Configure => self.h_configure(p, history),
            Verb::Start => self.h_start(p),
            Verb::Healthcheck => self.h_healthcheck(p),
            Verb::Schedule => self.h_schedule(p, history),
            Verb::Restart => self.h_restart(p),
            Verb::Recreate => self.h_recreate(p),
        }
    }

    fn done(&self, state: Json, duration: u64) -> HandlerResult {
        Ok(Handled {
            feedback: ExecutionFeedback::ok(state),
            duration,
            completion: None,
        })
    }

    /// The zone parameter, which must name a known zone when present.
    fn zone_param(&self, p: &Policy, required: bool) -> Result<Option<String>, ExecutionFeedback> {
        match p.get("zone") {
            None if required => Err(fail(BAD_REQUEST)),
            None => Ok(None),
            Some(Value::Scalar(z)) if self.state.zones.contains_key(z) => Ok(Some(z.clone())),
            Some(Value::Scalar(_)) => Err(fail(NOT_FOUND)),
            Some(_) => Err(fail(BAD_REQUEST)),
        }
    }

    /// Subject as a VM list; every VM must exist (and sit in `zone` if one
    /// is given).
    fn subject_vms(&self, p: &Policy, zone: Option<&str>) -> Result<Vec<String>, ExecutionFeedback> {
        let names = match &p.subject {
            Value::Scalar(s) => vec![s.clone()],
            Value::List(v) if !v.is_empty() => v.clone(),
            _ => return Err(fail(BAD_REQUEST)),
        };
        for n in &names {
            match self.state.vms.get(n) {
                None => return Err(fail(NOT_FOUND)),
                Some(vm) if zone.is_some_and(|z| z != vm.zone) => return Err(fail(NOT_FOUND)),
                Some(_) => {}
            }
        }
        Ok(names)
    }

    /// One `{}` per listed subject, or a bare `{}` for a scalar subject.
    fn per_subject(p: &Policy, items: Vec<Json>) -> Json {
        match p.subject {
            Value::List(_) => Json::Array(items),
            _ => items.into_iter().next().unwrap_or_else(|| json!({})),
        }
    }

    fn h_get(&mut self, p: &Policy) -> HandlerResult {
        let q = self.config.timings.query;
        let subject = p.subject.as_scalar().ok_or_else(|| fail(BAD_REQUEST))?;
        match subject {
            "domain" => {
                let zone = self.zone_param(p, true)?.expect("required");
                if p.get_str("kpi").is_some_and(|k| k != "availability") {
                    return Err(fail(BAD_REQUEST));
                }
                let z = &self.state.zones[&zone];
                self.done(
                    json!({ "zone": zone, "availability": fmt_fraction_pct(z.base_availability) }),
                    q,
                )
            }
            "switch" => {
                let zone = self.zone_param(p, true)?.expect("required");
                let z = &self.state.zones[&zone];
                self.done(json!({ "zone": zone, "switch": z.switches }), q)
            }
            "vm" => {
                let zone = self.zone_param(p, false)?;
                let vms: Vec<Json> = self
                    .state
                    .vms
                    .values()
                    .filter(|vm| zone.as_deref().is_none_or(|z| z == vm.zone))
                    .map(vm_json)
                    .collect();
                self.done(Json::Array(vms), q)
            }
            name if self.state.apps.contains_key(name) => self.get_app(p, name),
            name if self.state.vms.contains_key(name) => {
                let v = vm_json(&self.state.vms[name]);
                self.done(v, q)
            }
            name if self.state.services.contains_key(name) => {
                let s = &self.state.services[name];
                self.done(
                    json!({ "name": s.name, "status": s.status, "members": s.members, "running": s.running }),
                    q,
                )
            }
            _ => Err(fail(NOT_FOUND)),
        }
    }

    fn get_app(&mut self, p: &Policy, app: &str) -> HandlerResult {
        let out = &self.state.apps[app];
        let service = out.service.clone();
        let zone = self
            .state
            .services
            .get(&service)
            .map(|s| s.zone.clone())
            .ok_or_else(|| fail(NOT_FOUND))?;
        let (availability, health) = match p.get_str("kpi").unwrap_or("operational") {
            "target" => {
                let target = self.state.zones[&zone]
                    .target_availability
                    .ok_or_else(|| fail(BAD_REQUEST))?;
                (target, 100.0)
            }
            "operational" => {
                let a = if self.tracker.probes() == 0 {
                    1.0
                } else {
                    service_availability(&self.tracker).map_err(|_| fail(BAD_REQUEST))?
                };
                (a, out.snapshot.k_hs_pct)
            }
            _ => return Err(fail(BAD_REQUEST)),
        };
        self.done(
            json!([
                { "name": service, "availability": fmt_fraction_pct(availability) },
                { "name": service, "health": fmt_pct(health) },
            ]),
            self.config.timings.query,
        )
    }

    fn h_compliance(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, true)?.expect("required");
        let target = p.get_fraction("availability").ok_or_else(|| fail(BAD_REQUEST))?;
        let kind = p.get_str("type").unwrap_or("vm").to_string();
        let z = self.state.zones.get_mut(&zone).expect("checked");
        let count = required_redundancy(target, z.base_availability).map_err(|_| fail(BAD_REQUEST))?;
        z.target_availability = Some(target);
        self.done(json!({ "type": kind, "count": count }), self.config.timings.query)
    }

    fn h_avail(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, true)?.expect("required");
        if p.subject.as_scalar() != Some("vm") {
            return Err(fail(BAD_REQUEST));
        }
        let inv: Vec<Json> = self.state.zones[&zone]
            .inventory
            .iter()
            .map(|(size, count)| json!({ "size": size, "count": count }))
            .collect();
        self.done(Json::Array(inv), self.config.timings.query)
    }

    fn h_create(&mut self, p: &Policy) -> HandlerResult {
        if p.subject.as_scalar() != Some("vm") {
            return Err(fail(BAD_REQUEST));
        }
        let zone = self.zone_param(p, true)?.expect("required");
        let names = p.get("name").map(Value::items).unwrap_or_default();
        let count = match p.get("count") {
            Some(_) => p.get_u32("count").ok_or_else(|| fail(BAD_REQUEST))? as usize,
            None => names.len(),
        };
        let size = p.get_str("size").unwrap_or("small").to_string();
        let image = p.get_str("image").unwrap_or("ubuntu").to_string();
        if count == 0 || names.len() != count {
            return Err(fail(BAD_REQUEST));
        }
        if names.iter().any(|n| self.state.vms.contains_key(n)) {
            return Err(fail(BAD_REQUEST));
        }
        let now = self.state.clock;
        let z = self.state.zones.get_mut(&zone).expect("checked");
        let empty = z.inventory.is_empty();
        let available = z
            .inventory
            .get_mut(&size)
            .ok_or_else(|| fail(if empty { NO_CAPACITY } else { BAD_REQUEST }))?;
        if (*available as usize) < count {
            return Err(fail(NO_CAPACITY));
        }
        *available -= count as u32;
        let mut out = Vec::new();
        for name in &names {
            let ip = std::net::Ipv4Addr::from(z.next_ip);
            z.next_ip += 1;
            self.state.vms.insert(
                name.clone(),
                Vm {
                    name: name.clone(),
                    zone: zone.clone(),
                    ip,
                    size: size.clone(),
                    image: image.clone(),
                    status: VmStatus::Booting,
                    validated: false,
                    created_at: now,
                    faults: VmFaults::default(),
                },
            );
            out.push(json!({ "name": name, "IP": ip.to_string(), "size": size }));
        }
        Ok(Handled {
            feedback: ExecutionFeedback::ok(Json::Array(out)),
            duration: self.config.timings.create,
            completion: Some(Completion::Boot(names)),
        })
    }

    fn h_validate(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, false)?;
        let names = self.subject_vms(p, zone.as_deref())?;
        let mut all_ok = true;
        let mut items = Vec::new();
        for n in &names {
            let vm = self.state.vms.get_mut(n).expect("checked");
            let ssh = vm.is_active();
            let ping = ssh && vm.faults.degraded.get("s_net").is_none_or(|v| *v >= 100.0);
            vm.validated = ssh && ping;
            all_ok &= vm.validated;
            items.push(json!({ "ssh": ssh, "ping": ping }));
        }
        let state = match (&p.subject, all_ok) {
            (Value::Scalar(_), true) => json!({}),
            (Value::Scalar(_), false) => items.remove(0),
            _ => Json::Array(items),
        };
        let feedback = if all_ok {
            ExecutionFeedback::ok(state)
        } else {
            ExecutionFeedback::fail(state)
        };
        Ok(Handled {
            feedback,
            duration: self.config.timings.validate,
            completion: None,
        })
    }

    fn h_deploy(&mut self, p: &Policy) -> HandlerResult {
        let names = self.subject_vms(p, None)?;
        let kind = p.get_str("service").ok_or_else(|| fail(BAD_REQUEST))?.to_string();
        let service_type = p.get_str("type").unwrap_or(&kind).to_string();
        let name = p.get_str("name").ok_or_else(|| fail(BAD_REQUEST))?.to_string();
        if self.state.services.contains_key(&name) {
            return Err(fail(BAD_REQUEST));
        }
        if names.iter().any(|n| {
            let vm = &self.state.vms[n];
            !(vm.validated && vm.is_active())
        }) {
            return Err(fail(BAD_REQUEST));
        }
        let zone = self.state.vms[&names[0]].zone.clone();
        let items = vec![json!({}); names.len()];
        self.state.services.insert(
            name.clone(),
            Service {
                name,
                kind,
                service_type,
                zone,
                members: names,
                sources: Vec::new(),
                status: ServiceStatus::Deployed,
                running: Default::default(),
            },
        );
        self.done(Self::per_subject(p, items), self.config.timings.deploy)
    }

    fn service_param(&self, p: &Policy, members: &[String]) -> Result<String, ExecutionFeedback> {
        let name = p.get_str("service").ok_or_else(|| fail(BAD_REQUEST))?;
        let svc = self.state.services.get(name).ok_or_else(|| fail(NOT_FOUND))?;
        if members.iter().any(|m| !svc.members.contains(m)) {
            return Err(fail(BAD_REQUEST));
        }
        Ok(name.to_string())
    }

    fn h_configure(&mut self, p: &Policy, history: &[(Policy, ExecutionFeedback)]) -> HandlerResult {
        let zone = self.zone_param(p, false)?;
        let names = self.subject_vms(p, zone.as_deref())?;
        let service = self.service_param(p, &names)?;
        let sources = match p.get("source") {
            None => Vec::new(),
            Some(Value::Ref(label)) => {
                let (_, fb) = history
                    .iter()
                    .find(|(q, _)| q.label == *label)
                    .ok_or_else(|| fail(NOT_FOUND))?;
                fb.state
                    .get("switch")
                    .and_then(Json::as_array)
                    .ok_or_else(|| fail(BAD_REQUEST))?
                    .iter()
                    .filter_map(|s| s.as_str().map(str::to_string))
                    .collect()
            }
            Some(v) => v.items(),
        };
        let svc = self.state.services.get_mut(&service).expect("checked");
        svc.sources = sources;
        svc.status = svc.status.max(ServiceStatus::Configured);
        let items = vec![json!({}); names.len()];
        self.done(Self::per_subject(p, items), self.config.timings.configure)
    }

    fn h_start(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, false)?;
        let names = self.subject_vms(p, zone.as_deref())?;
        let service = self.service_param(p, &names)?;
        if self.state.services[&service].status < ServiceStatus::Configured {
            return Err(fail(BAD_REQUEST));
        }
        if names.iter().any(|n| {
            let vm = &self.state.vms[n];
            !(vm.validated && vm.is_active())
        }) {
            return Err(fail(BAD_REQUEST));
        }
        let svc = self.state.services.get_mut(&service).expect("checked");
        svc.running.extend(names.iter().cloned());
        svc.status = ServiceStatus::Running;
        let items = vec![json!({}); names.len()];
        self.done(Self::per_subject(p, items), self.config.timings.start)
    }

    fn h_healthcheck(&mut self, p: &Policy) -> HandlerResult {
        let service = p.subject.as_scalar().ok_or_else(|| fail(BAD_REQUEST))?;
        if !self.state.services.contains_key(service) {
            return Err(fail(NOT_FOUND));
        }
        let snapshot = self.run_healthcheck(p).map_err(|_| fail(BAD_REQUEST))?;
        let items = vec![json!({}); snapshot.subservices.len()];
        self.done(Json::Array(items), self.config.timings.healthcheck)
    }

    fn h_schedule(&mut self, p: &Policy, history: &[(Policy, ExecutionFeedback)]) -> HandlerResult {
        let label = p.subject.as_ref_label().ok_or_else(|| fail(BAD_REQUEST))?;
        let (task, _) = history
            .iter()
            .find(|(q, _)| q.label == label)
            .ok_or_else(|| fail(NOT_FOUND))?;
        if task.verb != Verb::Healthcheck {
            return Err(fail(BAD_REQUEST));
        }
        let period = parse_frequency(p.get_str("frequency").unwrap_or("hourly")).ok_or_else(|| fail(BAD_REQUEST))?;
        let service = task.subject.as_scalar().unwrap_or_default().to_string();
        self.state.schedules.push(Schedule {
            label,
            policy: task.clone(),
            period,
            next_at: self.state.clock + period,
        });
        self.monitor(&service).map_err(|_| fail(NOT_FOUND))?;
        self.done(json!({}), self.config.timings.query)
    }

    /// Takes the VM out of service; it comes back when the action completes.
    fn take_down(&mut self, name: &str) {
        if let Some(vm) = self.state.vms.get_mut(name) {
            vm.status = VmStatus::Booting;
            vm.validated = false;
        }
        for svc in self.state.services.values_mut() {
            svc.running.remove(name);
        }
    }

    fn h_restart(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, false)?;
        let names = self.subject_vms(p, zone.as_deref())?;
        let [name] = names.as_slice() else {
            return Err(fail(BAD_REQUEST));
        };
        self.take_down(name);
        Ok(Handled {
            feedback: ExecutionFeedback::ok(json!({})),
            duration: self.config.timings.restart,
            completion: Some(Completion::Restart(name.clone())),
        })
    }

    fn h_recreate(&mut self, p: &Policy) -> HandlerResult {
        let zone = self.zone_param(p, false)?;
        let names = self.subject_vms(p, zone.as_deref())?;
        let [name] = names.as_slice() else {
            return Err(fail(BAD_REQUEST));
        };
        let now = self.state.clock;
        let vm = self.state.vms.get_mut(name).expect("checked");
        let z = self.state.zones.get_mut(&vm.zone).ok_or_else(|| fail(NOT_FOUND))?;
        // Delete returns one unit and create takes it again, so the
        // inventory count is unchanged.
        vm.ip = std::net::Ipv4Addr::from(z.next_ip);
        z.next_ip += 1;
        vm.faults = VmFaults::default();
        vm.created_at = now;
        let name = name.clone();
        self.take_down(&name);
        Ok(Handled {
            feedback: ExecutionFeedback::ok(json!({})),
            duration: self.config.timings.recreate,
            completion: Some(Completion::Recreate(name)),
        })
    }

    /// Finishes a timed action; `Some` replaces the initial feedback.
    fn complete(&mut self, c: Completion) -> Option<ExecutionFeedback> {
        Some(match c {
            Completion::Boot(names) => {
                for n in names {
                    if let Some(vm) = self.state.vms.get_mut(&n) {
                        if vm.status == VmStatus::Booting {
                            vm.status = VmStatus::Active;
                        }
                    }
                }
                return None;
            }
            Completion::Restart(name) => {
                let Some(vm) = self.state.vms.get_mut(&name) else {
                    return Some(fail(NOT_FOUND));
                };
                if vm.faults.persistent {
                    vm.status = VmStatus::Down;
                    return Some(ExecutionFeedback::fail(json!({ "name": name, "status": vm.status })));
                }
                vm.faults = VmFaults::default();
                vm.status = VmStatus::Active;
                ExecutionFeedback::ok(json!({ "name": name, "status": vm.status }))
            }
            Completion::Recreate(name) => {
                let Some(vm) = self.state.vms.get_mut(&name) else {
                    return Some(fail(NOT_FOUND));
                };
                vm.status = VmStatus::Active;
                ExecutionFeedback::ok(json!({ "name": name, "IP": vm.ip.to_string(), "status": vm.status }))
            }
        })
    }
}

fn vm_json(vm: &Vm) -> Json {
    json!({ "name": vm.name, "IP": vm.ip.to_string(), "size": vm.size, "status": vm.status })
}

/// `hourly`, `daily`, `minutely` or a count with an `s`/`m`/`h` suffix.
pub(crate) fn parse_frequency(s: &str) -> Option<u64> {
    match s {
        "hourly" => return Some(3600),
        "daily" => return Some(86_400),
        "minutely" => return Some(60),
        _ => {}
    }
    let (num, unit) = s.split_at(s.len().checked_sub(1)?);
    let n: u64 = num.parse().ok()?;
    let mult = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        _ => return None,
    };
    (n > 0).then_some(n * mult)
}
