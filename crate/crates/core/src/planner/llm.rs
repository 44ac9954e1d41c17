//! Chat-completion adapter for the planner.
//!
//! Every planner step becomes one request: a system prompt taken from one
//! of four profiles (classifier, generator, validator, assurance) and a user
//! message carrying the task, the execution history and the full context as
//! JSON. Requests and responses can be recorded to a transcript and
//! replayed later without network access.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    validate_tree, FormalIntent, IntentType, Planner, PlannerContext, PlannerError, RulePlanner, ValidationReport,
    ViolationKind,
};
use crate::policy::{parse_policy, render_feedback, Phase, Policy, PolicyTree};

pub const ENV_ENDPOINT: &str = "INTENT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "INTENT_LLM_API_KEY";
pub const ENV_MODEL: &str = "INTENT_LLM_MODEL";
pub const ENV_TIMEOUT: &str = "INTENT_LLM_TIMEOUT_SECS";

/// Re-asks allowed after an unparseable reply.
pub const MAX_REASKS: u32 = 2;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("adapter configuration: {0}")]
    Config(String),
    #[error("http: {0}")]
    Http(String),
    #[error("unexpected response shape: {0}")]
    Protocol(String),
    #[error("replayed request #{index} differs from the recorded one")]
    ReplayMismatch { index: usize },
    #[error("transcript exhausted at request #{index}")]
    ReplayExhausted { index: usize },
    #[error("transcript i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Classifier,
    Generator,
    Validator,
    Assurance,
}

impl Profile {
    pub fn prompt(self) -> &'static str {
        match self {
            Profile::Classifier => include_str!("../../profiles/classifier.txt"),
            Profile::Generator => include_str!("../../profiles/generator.txt"),
            Profile::Validator => include_str!("../../profiles/validator.txt"),
            Profile::Assurance => include_str!("../../profiles/assurance.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: &str) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

pub trait ChatClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint =
            std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let timeout = match std::env::var(ENV_TIMEOUT) {
            Ok(s) => s
                .parse()
                .map_err(|_| LlmError::Config(format!("{ENV_TIMEOUT} must be a whole number of seconds")))?,
            Err(_) => 60,
        };
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".into()),
            timeout: Duration::from_secs(timeout),
        })
    }
}

/// OpenAI-compatible `chat/completions` client.
#[cfg(feature = "http")]
pub struct HttpChatClient {
    config: LlmConfig,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpChatClient {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Ok(Self::new(LlmConfig::from_env()?))
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }
}

#[cfg(feature = "http")]
impl ChatClient for HttpChatClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body: serde_json::Value = req
            .send_json(serde_json::to_value(request).map_err(|e| LlmError::Protocol(e.to_string()))?)
            .map_err(|e| LlmError::Http(e.to_string()))?
            .into_json()
            .map_err(|e| LlmError::Protocol(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol(body.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: ChatRequest,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| LlmError::Io(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
    }
}

/// Passes requests through to `inner` and keeps every exchange.
pub struct RecordingClient<C> {
    inner: C,
    transcript: Transcript,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            transcript: Transcript::default(),
        }
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        self.transcript.entries.push(TranscriptEntry {
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Answers from a transcript, insisting that requests arrive exactly as
/// recorded.
pub struct ReplayClient {
    transcript: Transcript,
    cursor: usize,
}

impl ReplayClient {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript, cursor: 0 }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Transcript::load(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.transcript.entries.len() - self.cursor
    }
}

impl ChatClient for ReplayClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let index = self.cursor;
        let entry = self
            .transcript
            .entries
            .get(index)
            .ok_or(LlmError::ReplayExhausted { index })?;
        if entry.request != *request {
            return Err(LlmError::ReplayMismatch { index });
        }
        self.cursor += 1;
        Ok(entry.response.clone())
    }
}

/// Offline stand-in for a model: decodes each request and answers with
/// what the rule engine would do. Used to produce reference transcripts.
#[derive(Debug, Default)]
pub struct RuleBackedClient {
    rules: RulePlanner,
}

impl ChatClient for RuleBackedClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .ok_or_else(|| LlmError::Protocol("no user message".into()))?;
        let text = &user.content;
        let field = |name: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(name))
                .map(str::trim)
                .ok_or_else(|| LlmError::Protocol(format!("missing {name}")))
        };
        let fail = |e: PlannerError| LlmError::Protocol(e.to_string());
        match field("TASK:")? {
            "formalize" => Ok(self.rules.formalize(field("INTENT:")?).map_err(fail)?.to_string()),
            "classify" => Ok(self.rules.classify(field("INTENT:")?).map_err(fail)?.to_string()),
            "validate" => Ok("OK".into()),
            "next_policy" => {
                let json = text
                    .split("```json")
                    .nth(1)
                    .and_then(|rest| rest.split("```").next())
                    .ok_or_else(|| LlmError::Protocol("missing context block".into()))?;
                let ctx: PlannerContext = serde_json::from_str(json).map_err(|e| LlmError::Protocol(e.to_string()))?;
                Ok(match self.rules.next_policy(&ctx).map_err(fail)? {
                    Some(p) => p.to_string(),
                    None => "DONE".into(),
                })
            }
            other => Err(LlmError::Protocol(format!("unknown task {other}"))),
        }
    }
}

/// Planner driven by a chat-completion model.
pub struct LlmPlanner<C> {
    client: C,
    model: String,
    latency: Duration,
    calls: u32,
}

impl<C: ChatClient> LlmPlanner<C> {
    pub fn new(client: C, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
            latency: Duration::ZERO,
            calls: 0,
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn into_client(self) -> C {
        self.client
    }

    pub fn calls(&self) -> u32 {
        self.calls
    }

    fn ask(&mut self, messages: &[ChatMessage]) -> Result<String, PlannerError> {
        let request = ChatRequest {
            model: self.model.clone(),
            temperature: 0.0,
            messages: messages.to_vec(),
        };
        let started = Instant::now();
        let reply = self.client.complete(&request);
        self.latency += started.elapsed();
        self.calls += 1;
        Ok(reply?)
    }

    /// Sends `user` under `profile`, re-asking with the parse error appended
    /// until `parse` accepts the reply or the re-ask budget is spent.
    fn ask_parsed<T>(
        &mut self,
        profile: Profile,
        user: String,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, PlannerError> {
        let mut messages = vec![ChatMessage::system(profile.prompt()), ChatMessage::user(user)];
        let mut attempts = 0;
        loop {
            attempts += 1;
            let reply = self.ask(&messages)?;
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(e) if attempts > MAX_REASKS => {
                    return Err(PlannerError::Generation {
                        attempts,
                        last_error: e,
                        raw: reply,
                    })
                }
                Err(e) => {
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(format!(
                        "That reply could not be used: {e}. Answer again in the required format."
                    )));
                }
            }
        }
    }
}

fn strip_fences(reply: &str) -> &str {
    reply
        .trim()
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim()
        .trim_matches('`')
        .trim()
}

fn parse_policy_reply(reply: &str) -> Result<Option<Policy>, String> {
    let body = strip_fences(reply);
    if body.eq_ignore_ascii_case("done") {
        return Ok(None);
    }
    let mut first_err = None;
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match parse_policy(line) {
            Ok(p) => return Ok(Some(p)),
            Err(e) => {
                first_err.get_or_insert(e.to_string());
            }
        }
    }
    Err(first_err.unwrap_or_else(|| "empty reply".into()))
}

/// History as the model sees it: each policy followed by its feedback.
pub fn render_history(history: &[(Policy, crate::policy::ExecutionFeedback)]) -> String {
    history
        .iter()
        .map(|(p, f)| format!("{p}\n  -> {}", render_feedback(f)))
        .collect::<Vec<_>>()
        .join("\n")
}

impl<C: ChatClient> Planner for LlmPlanner<C> {
    fn formalize(&mut self, text: &str) -> Result<FormalIntent, PlannerError> {
        if text.trim().is_empty() {
            return Err(PlannerError::EmptyIntent);
        }
        let user = format!(
            "TASK: formalize\nINTENT: {}\nReply with one `Key: value` pair per line.",
            text.trim()
        );
        let source = text.to_string();
        self.ask_parsed(Profile::Classifier, user, |r| {
            FormalIntent::parse_lines(&source, strip_fences(r)).map_err(|e| e.to_string())
        })
    }

    fn classify(&mut self, text: &str) -> Result<IntentType, PlannerError> {
        if text.trim().is_empty() {
            return Err(PlannerError::EmptyIntent);
        }
        let types: Vec<&str> = IntentType::ALL.iter().map(|t| t.as_str()).collect();
        let user = format!(
            "TASK: classify\nINTENT: {}\nTYPES: {}\nReply with exactly one type.",
            text.trim(),
            types.join(", ")
        );
        self.ask_parsed(Profile::Classifier, user, |r| {
            IntentType::parse(strip_fences(r)).ok_or_else(|| format!("`{}` is not one of the listed types", r.trim()))
        })
    }

    fn next_policy(&mut self, ctx: &PlannerContext) -> Result<Option<Policy>, PlannerError> {
        let profile = match ctx.phase {
            Phase::Fulfillment => Profile::Generator,
            Phase::Assurance => Profile::Assurance,
        };
        let context = serde_json::to_string(ctx).map_err(|e| PlannerError::Generation {
            attempts: 0,
            last_error: e.to_string(),
            raw: String::new(),
        })?;
        let user = format!(
            "TASK: next_policy\nPHASE: {}\nHISTORY:\n{}\nCONTEXT:\n```json\n{context}\n```\nReply with exactly one policy tuple, or DONE.",
            match ctx.phase {
                Phase::Fulfillment => "fulfillment",
                Phase::Assurance => "assurance",
            },
            render_history(&ctx.history),
        );
        self.ask_parsed(profile, user, parse_policy_reply)
    }

    fn review(
        &mut self,
        tree: &PolicyTree,
        formal: &FormalIntent,
        intent_type: IntentType,
    ) -> Result<ValidationReport, PlannerError> {
        let mut report = validate_tree(tree, formal, intent_type);
        let listing: Vec<String> = tree.policies().iter().map(Policy::to_string).collect();
        let user = format!(
            "TASK: validate\nTYPE: {intent_type}\nINTENT:\n{formal}\nTREE:\n{}\nReply OK, or one problem per line.",
            listing.join("\n")
        );
        let reply = self.ask_parsed(Profile::Validator, user, |r| Ok::<_, String>(r.to_string()))?;
        let body = strip_fences(&reply);
        if !body.eq_ignore_ascii_case("ok") {
            for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
                report.violations.push(super::Violation {
                    kind: ViolationKind::Attribute,
                    label: None,
                    message: format!("validator: {line}"),
                });
            }
        }
        Ok(report)
    }

    fn adapter_latency(&self) -> Duration {
        self.latency
    }
}
