//! Policy tuples, policy trees and execution feedback.
//!
//! Text form, one policy per line:
//!
//! ```text
//! M1 = (get, domain, zone=West, kpi=availability)
//! E2 = (validate, [collector_1, collector_2], zone=West)
//! E7 = (schedule, E6, frequency=hourly)
//! ```
//!
//! A bare value that looks like a label (`M2`, `E_6`) is a reference to an
//! earlier policy of the same tree.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("label {0} appears twice in the tree")]
    DuplicateLabel(Label),
    #[error("{from} references {to}, which does not precede it")]
    ForwardReference { from: Label, to: Label },
}

/// Measure / Analyze / Execute tag. Carried as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyClass {
    #[serde(rename = "M")]
    Measure,
    #[serde(rename = "A")]
    Analyze,
    #[serde(rename = "E")]
    Execute,
}

impl PolicyClass {
    pub fn prefix(self) -> char {
        match self {
            PolicyClass::Measure => 'M',
            PolicyClass::Analyze => 'A',
            PolicyClass::Execute => 'E',
        }
    }

    fn from_prefix(c: char) -> Option<Self> {
        match c {
            'M' => Some(PolicyClass::Measure),
            'A' => Some(PolicyClass::Analyze),
            'E' => Some(PolicyClass::Execute),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub class: PolicyClass,
    pub index: u32,
}

impl Label {
    pub fn new(class: PolicyClass, index: u32) -> Self {
        Self { class, index }
    }

    /// Recognizes `M2`, `E_6` and similar.
    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        let class = PolicyClass::from_prefix(chars.next()?)?;
        let rest = chars.as_str();
        let digits = rest.strip_prefix('_').unwrap_or(rest);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Self {
            class,
            index: digits.parse().ok()?,
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.prefix(), self.index)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Label::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid label `{s}`")))
    }
}

macro_rules! verbs {
    ($($variant:ident => $text:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum Verb { $($variant),* }

        impl Verb {
            pub const ALL: &'static [Verb] = &[$(Verb::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self { $(Verb::$variant => $text),* }
            }
        }

        impl FromStr for Verb {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($text => Ok(Verb::$variant),)* _ => Err(()) }
            }
        }
    };
}

verbs! {
    Get => "get",
    Compliance => "compliance",
    Avail => "avail",
    Create => "create",
    Validate => "validate",
    Deploy => "deploy",
    Configure => "configure",
    Start => "start",
    Healthcheck => "healthcheck",
    Schedule => "schedule",
    Restart => "restart",
    Recreate => "recreate",
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter or subject value. Untyped at parse time; handlers coerce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Scalar(String),
    List(Vec<String>),
    Ref(Label),
}

impl Value {
    pub fn scalar(s: impl Into<String>) -> Self {
        Value::Scalar(s.into())
    }

    pub fn list<S: Into<String>>(items: impl IntoIterator<Item = S>) -> Self {
        Value::List(items.into_iter().map(Into::into).collect())
    }

    /// Classifies a bare token.
    pub fn atom(s: &str) -> Self {
        match Label::parse(s) {
            Some(l) => Value::Ref(l),
            None => Value::Scalar(s.to_string()),
        }
    }

    pub fn as_scalar(&self) -> Option<&str> {
        match self {
            Value::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_ref_label(&self) -> Option<Label> {
        match self {
            Value::Ref(l) => Some(*l),
            _ => None,
        }
    }

    /// Scalar as a one-element list, list as itself.
    pub fn items(&self) -> Vec<String> {
        match self {
            Value::Scalar(s) => vec![s.clone()],
            Value::List(v) => v.clone(),
            Value::Ref(l) => vec![l.to_string()],
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Scalar(s) => Json::String(s.clone()),
            Value::Ref(l) => Json::String(l.to_string()),
            Value::List(v) => Json::Array(v.iter().cloned().map(Json::String).collect()),
        }
    }

    fn from_json(j: &Json) -> Result<Self, String> {
        match j {
            Json::String(s) => Ok(Value::atom(s)),
            Json::Array(items) => items
                .iter()
                .map(|i| match i {
                    Json::String(s) => Ok(s.clone()),
                    other => Ok(other.to_string()),
                })
                .collect::<Result<Vec<_>, String>>()
                .map(Value::List),
            Json::Number(n) => Ok(Value::Scalar(n.to_string())),
            Json::Bool(b) => Ok(Value::Scalar(b.to_string())),
            other => Err(format!("unsupported value {other}")),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(s) => f.write_str(s),
            Value::Ref(l) => write!(f, "{l}"),
            Value::List(items) => write!(f, "[{}]", items.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub label: Label,
    pub verb: Verb,
    pub subject: Value,
    pub params: IndexMap<String, Value>,
}

impl Policy {
    pub fn new(label: Label, verb: Verb, subject: Value) -> Self {
        Self {
            label,
            verb,
            subject,
            params: IndexMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn scalar_param(self, key: &str, value: impl Into<String>) -> Self {
        self.param(key, Value::Scalar(value.into()))
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.params.get(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_scalar)
    }

    pub fn get_u32(&self, key: &str) -> Option<u32> {
        self.get_str(key)?.trim().parse().ok()
    }

    /// Percent-or-fraction coercion: `99.99`, `99.99%` and `0.9999` all
    /// yield `0.9999`.
    pub fn get_fraction(&self, key: &str) -> Option<f64> {
        parse_fraction(self.get_str(key)?)
    }

    /// Every label this policy references, in the subject or parameters.
    pub fn references(&self) -> Vec<Label> {
        std::iter::once(&self.subject)
            .chain(self.params.values())
            .filter_map(Value::as_ref_label)
            .collect()
    }

    pub fn relabel(mut self, label: Label) -> Self {
        self.label = label;
        self
    }
}

pub fn parse_fraction(s: &str) -> Option<f64> {
    let s = s.trim();
    let (num, pct) = match s.strip_suffix('%') {
        Some(n) => (n.trim(), true),
        None => (s, false),
    };
    let v: f64 = num.parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    if pct || v > 1.0 {
        // Shift the decimal exponent rather than divide, so "99.99" is the
        // same double as the literal 0.9999.
        format!("{num}e-2").parse().ok()
    } else {
        Some(v)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = ({}, {}", self.label, self.verb, self.subject)?;
        for (k, v) in &self.params {
            write!(f, ", {k}={v}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Policy {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse_policy(s)
    }
}

pub fn serialize_policy(policy: &Policy) -> String {
    policy.to_string()
}

pub fn parse_policy(text: &str) -> Result<Policy, ParseError> {
    Parser { src: text, pos: 0 }.policy()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            position: at,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(got) if got == c => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(got) => self.err(self.pos, format!("expected `{c}`, found `{got}`")),
            None => self.err(self.pos, format!("expected `{c}`, found end of input")),
        }
    }

    fn atom(&mut self) -> Result<(usize, &'a str), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest
            .find(|c: char| c.is_whitespace() || ",()[]=".contains(c))
            .unwrap_or(rest.len());
        if len == 0 {
            return match self.peek() {
                Some(c) => self.err(start, format!("expected a value, found `{c}`")),
                None => self.err(start, "expected a value, found end of input"),
            };
        }
        self.pos += len;
        Ok((start, &rest[..len]))
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.skip_ws();
        if self.peek() != Some('[') {
            return Ok(Value::atom(self.atom()?.1));
        }
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.pos += 1;
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.atom()?.1.to_string());
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                Some(c) => return self.err(self.pos, format!("expected `,` or `]` in list, found `{c}`")),
                None => return self.err(self.pos, "unterminated list"),
            }
        }
    }

    fn policy(mut self) -> Result<Policy, ParseError> {
        let (at, raw_label) = self.atom()?;
        let label = match Label::parse(raw_label) {
            Some(l) => l,
            None => return self.err(at, format!("`{raw_label}` is not a policy label (M/A/E + index)")),
        };
        self.expect('=')?;
        self.expect('(')?;
        let (at, raw_verb) = self.atom()?;
        let verb: Verb = match raw_verb.parse() {
            Ok(v) => v,
            Err(()) => return self.err(at, format!("unknown verb `{raw_verb}`")),
        };
        self.expect(',')?;
        let subject = self.value()?;
        let mut params = IndexMap::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                Some(',') => {
                    self.pos += 1;
                    let (at, key) = self.atom()?;
                    self.expect('=')?;
                    let value = self.value()?;
                    if params.insert(key.to_string(), value).is_some() {
                        return self.err(at, format!("duplicate parameter `{key}`"));
                    }
                }
                Some(c) => return self.err(self.pos, format!("expected `,` or `)`, found `{c}`")),
                None => return self.err(self.pos, "unterminated policy tuple"),
            }
        }
        self.skip_ws();
        if self.pos != self.src.len() {
            return self.err(self.pos, "trailing input after policy");
        }
        Ok(Policy {
            label,
            verb,
            subject,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyJson {
    label: Label,
    verb: Verb,
    subject: Json,
    params: IndexMap<String, Json>,
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolicyJson {
            label: self.label,
            verb: self.verb,
            subject: self.subject.to_json(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = PolicyJson::deserialize(d)?;
        Ok(Policy {
            label: raw.label,
            verb: raw.verb,
            subject: Value::from_json(&raw.subject).map_err(D::Error::custom)?,
            params: raw
                .params
                .iter()
                .map(|(k, v)| Ok((k.clone(), Value::from_json(v)?)))
                .collect::<Result<_, String>>()
                .map_err(D::Error::custom)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fulfillment,
    Assurance,
}

/// Ordered policies; execution order is list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub phase: Phase,
    policies: Vec<Policy>,
}

impl PolicyTree {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            policies: Vec::new(),
        }
    }

    pub fn from_policies(phase: Phase, policies: impl IntoIterator<Item = Policy>) -> Result<Self, TreeError> {
        let mut t = Self::new(phase);
        for p in policies {
            t.push(p)?;
        }
        Ok(t)
    }

    /// Parses one policy per non-empty line.
    pub fn parse(phase: Phase, text: &str) -> Result<Self, String> {
        let policies = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| parse_policy(l).map_err(|e| format!("{l}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_policies(phase, policies).map_err(|e| e.to_string())
    }

    pub fn push(&mut self, policy: Policy) -> Result<(), TreeError> {
        if self.get(policy.label).is_some() {
            return Err(TreeError::DuplicateLabel(policy.label));
        }
        for r in policy.references() {
            if self.get(r).is_none() {
                return Err(TreeError::ForwardReference {
                    from: policy.label,
                    to: r,
                });
            }
        }
        self.policies.push(policy);
        Ok(())
    }

    pub fn get(&self, label: Label) -> Option<&Policy> {
        self.policies.iter().find(|p| p.label == label)
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn verbs(&self) -> Vec<Verb> {
        self.policies.iter().map(|p| p.verb).collect()
    }
}

/// Result of executing one policy: a success flag plus arbitrary state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub success: bool,
    pub state: Json,
}

impl ExecutionFeedback {
    pub fn ok(state: Json) -> Self {
        Self { success: true, state }
    }

    pub fn fail(state: Json) -> Self {
        Self { success: false, state }
    }

    /// Failure carrying `{error: <code>}`.
    pub fn error(code: &str) -> Self {
        Self::fail(serde_json::json!({ "error": code }))
    }

    pub fn error_code(&self) -> Option<&str> {
        self.state.get("error").and_then(Json::as_str)
    }
}

impl fmt::Display for ExecutionFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_feedback(self))
    }
}

/// Compact single-line rendering: `True, {zone: West, availability: 99.9%}`.
pub fn render_feedback(feedback: &ExecutionFeedback) -> String {
    format!(
        "{}, {}",
        if feedback.success { "True" } else { "False" },
        render_state(&feedback.state)
    )
}

pub fn render_state(v: &Json) -> String {
    match v {
        Json::Null => "None".into(),
        Json::Bool(b) => if *b { "True" } else { "False" }.into(),
        Json::Number(n) => n.to_string(),
        Json::String(s) => s.clone(),
        Json::Array(items) => {
            let rendered: Vec<String> = items.iter().map(render_state).collect();
            let empty = rendered.iter().all(|r| r == "{}" || r == "[]");
            format!("[{}]", rendered.join(if empty { "," } else { ", " }))
        }
        Json::Object(map) => {
            let fields: Vec<String> = map.iter().map(|(k, v)| format!("{k}: {}", render_state(v))).collect();
            format!("{{{}}}", fields.join(", "))
        }
    }
}
