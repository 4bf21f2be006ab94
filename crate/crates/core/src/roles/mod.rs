//! The four agent roles. Each role renders its template, calls the gateway
//! and parses the reply, re-asking (same call key) when the reply does not
//! follow the required format.

mod evaluate;
mod template;

pub use evaluate::{
    aggregate_annotations, plurality_consensus, Consensus, EvalSettings, Evaluation, TrialArtifacts,
};
pub use template::{PromptSet, PromptTemplate, TemplateError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{CallKey, ChatMessage, Gateway, GatewayError, RoleKind};
use crate::memory::{LocalMemory, RoleTag};
use crate::sandbox::{ExecutionOutcome, OutcomeStatus};
use crate::task::{Plan, Subtask, SubtaskKind, TaskRequest};
use crate::toolreg::ToolRegistry;

#[derive(Debug, Error)]
pub enum RoleError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("planner: {0}")]
    Planner(String),
    #[error("tool selector: {0}")]
    ToolSelection(String),
    #[error("programmer: {0}")]
    Programmer(String),
    #[error("evaluator: {0}")]
    Evaluation(String),
    #[error("{0}")]
    Precondition(String),
}

impl RoleError {
    /// Errors that invalidate the whole run rather than one trial.
    pub fn is_fatal(&self) -> bool {
        matches!(self, Self::Gateway(GatewayError::ReplayMismatch { .. } | GatewayError::ReplayExhausted(_)))
            || matches!(self, Self::Template(_))
    }
}

/// Code produced by the programmer for one trial and repair attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSolution {
    pub code: String,
    pub analysis: String,
    pub trial: u32,
    pub attempt: u32,
}

/// Everything the programmer prompt needs besides local memory.
#[derive(Debug, Clone)]
pub struct ProgrammerContext<'a> {
    pub subtask: &'a Subtask,
    pub data_summary: &'a str,
    pub requirements: &'a str,
    /// Rendered global memory.
    pub history: &'a str,
    /// Rendered tool documentation.
    pub tool_docs: &'a str,
}

pub struct Roles<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub max_parse_retries: u32,
    /// Evaluation methods advertised to the evaluator.
    pub methods: &'a [String],
}

pub(crate) fn or_none(s: Option<&str>) -> String {
    match s.map(str::trim) {
        Some(t) if !t.is_empty() => t.to_string(),
        _ => "(none)".to_string(),
    }
}

fn or_placeholder(s: &str, placeholder: &str) -> String {
    if s.trim().is_empty() {
        placeholder.to_string()
    } else {
        s.trim_end().to_string()
    }
}

/// Parses a JSON value from a raw reply, a fenced block, or the first
/// object/array embedded in prose.
pub(crate) fn extract_json(reply: &str) -> Result<Value, String> {
    let trimmed = reply.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    for block in fenced_blocks(reply) {
        if let Ok(v) = serde_json::from_str::<Value>(block.body.trim()) {
            return Ok(v);
        }
    }
    if let Some(start) = reply.find(['{', '[']) {
        if let Some(Ok(v)) = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>().next() {
            return Ok(v);
        }
    }
    Err("no JSON value found in the reply".into())
}

struct Fenced<'r> {
    info: &'r str,
    body: String,
}

fn fenced_blocks(reply: &str) -> Vec<Fenced<'_>> {
    let mut out = Vec::new();
    let mut open: Option<(&str, Vec<&str>)> = None;
    for line in reply.lines() {
        let t = line.trim_start();
        match (&mut open, t.strip_prefix("```")) {
            (None, Some(info)) => open = Some((info.trim(), Vec::new())),
            (Some(_), Some(rest)) if rest.trim().is_empty() => {
                let (info, lines) = open.take().expect("open block");
                let mut body = lines.join("\n");
                body.push('\n');
                out.push(Fenced { info, body });
            }
            (Some((_, lines)), _) => lines.push(line),
            (None, None) => {}
        }
    }
    out
}

/// Splits a programmer reply into (analysis, code). Exactly one Python (or
/// untagged) fenced block is required.
pub(crate) fn extract_code(reply: &str) -> Result<(String, String), String> {
    let blocks: Vec<Fenced> = fenced_blocks(reply)
        .into_iter()
        .filter(|b| matches!(b.info.to_ascii_lowercase().as_str(), "" | "python" | "py" | "python3"))
        .collect();
    match blocks.as_slice() {
        [] => Err("the reply has no fenced code block".into()),
        [b] if b.body.trim().is_empty() => Err("the code block is empty".into()),
        [b] => {
            let analysis = reply.split("```").next().unwrap_or_default().trim().to_string();
            Ok((analysis, b.body.trim_end().to_string() + "\n"))
        }
        many => Err(format!("the reply has {} code blocks; send exactly one", many.len())),
    }
}

fn subtask_slots(subtask: &Subtask, requirements: &str) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("subtask_id", subtask.id.to_string()),
        ("subtask_title", subtask.title.clone()),
        ("subtask_kind", subtask.kind.as_str().to_string()),
        ("subtask_description", subtask.description.clone()),
        ("requirements", or_placeholder(requirements, "(none)")),
    ])
}

#[derive(Deserialize)]
struct RawPlan {
    #[serde(default)]
    rationale: String,
    subtasks: Vec<RawSubtask>,
}

#[derive(Deserialize)]
struct RawSubtask {
    #[serde(default)]
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    kind: String,
}

fn parse_plan(reply: &str) -> Result<Result<Plan, String>, String> {
    let v = extract_json(reply)?;
    let raw: RawPlan = serde_json::from_value(v).map_err(|e| format!("plan JSON has the wrong shape: {e}"))?;
    if raw.subtasks.is_empty() {
        return Ok(Err("the plan has no subtasks".into()));
    }
    let mut subtasks = Vec::with_capacity(raw.subtasks.len());
    for (i, s) in raw.subtasks.into_iter().enumerate() {
        if s.description.trim().is_empty() {
            return Err(format!("subtask {} has no description", i + 1));
        }
        let title = if s.title.trim().is_empty() { format!("Step {}", i + 1) } else { s.title.trim().to_string() };
        subtasks.push(Subtask {
            id: i as u32 + 1,
            title,
            description: s.description.trim().to_string(),
            kind: SubtaskKind::parse_lenient(&s.kind),
        });
    }
    Ok(Ok(Plan { subtasks, rationale: raw.rationale }))
}

fn parse_tools(reply: &str) -> Result<Vec<String>, String> {
    let v = extract_json(reply)?;
    let list = match &v {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("tools") {
            Some(Value::Array(a)) => a,
            _ => return Err("expected {\"tools\": [...]}".into()),
        },
        _ => return Err("expected a JSON list of tool names".into()),
    };
    list.iter()
        .map(|t| t.as_str().map(|s| s.trim().to_string()).ok_or_else(|| format!("tool name {t} is not a string")))
        .collect()
}

const RETRY_NOTE: &str = "Your previous reply could not be used";

impl<'a> Roles<'a> {
    /// Calls the gateway, re-asking with the parse error until `parse`
    /// succeeds or the retry budget runs out.
    fn ask<T>(
        &self,
        key: CallKey,
        mut messages: Vec<ChatMessage>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(T, String), Result<RoleError, String>> {
        let mut last = String::new();
        for round in 0..=self.max_parse_retries {
            let reply = self.gateway.complete(key, &messages).map_err(|e| Ok(e.into()))?;
            match parse(&reply) {
                Ok(v) => return Ok((v, reply)),
                Err(e) => {
                    tracing::warn!(%key, round, "unusable reply: {e}");
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(format!("{RETRY_NOTE}: {e}. Reply again in the required format.")));
                    last = e;
                }
            }
        }
        Err(Err(format!("no usable reply after {} attempts: {last}", self.max_parse_retries + 1)))
    }

    pub fn plan(&self, request: &TaskRequest, data_summary: &str) -> Result<Plan, RoleError> {
        let kinds: Vec<&str> = SubtaskKind::ALL.iter().map(|k| k.as_str()).collect();
        let slots = BTreeMap::from([
            ("task", request.task_text.trim().to_string()),
            ("requirements", or_none(request.requirements.as_deref())),
            ("data_description", or_none(request.data_description.as_deref())),
            ("data_summary", data_summary.trim_end().to_string()),
            ("kinds", kinds.join(", ")),
        ]);
        let system = self.prompts.get(RoleKind::Planner).render(&slots)?;
        let messages = vec![ChatMessage::system(system), ChatMessage::user(request.task_text.trim())];
        // An empty plan is a definite answer, not a format slip: fail at once.
        match self.ask(CallKey::new(RoleKind::Planner, 0, 0), messages, parse_plan) {
            Ok((Ok(plan), _)) => Ok(plan),
            Ok((Err(empty), _)) => Err(RoleError::Planner(empty)),
            Err(Ok(e)) => Err(e),
            Err(Err(msg)) => Err(RoleError::Planner(msg)),
        }
    }

    /// Names of registered tools chosen for `subtask`. Unknown or
    /// kind-mismatched names are dropped; an empty list is legal.
    pub fn select_tools(
        &self,
        subtask: &Subtask,
        requirements: &str,
        registry: &ToolRegistry,
    ) -> Result<Vec<String>, RoleError> {
        let mut slots = subtask_slots(subtask, requirements);
        slots.insert("tools", registry.list_for(subtask.kind).render().trim_end().to_string());
        let system = self.prompts.get(RoleKind::ToolSelector).render(&slots)?;
        let messages = vec![ChatMessage::system(system), ChatMessage::user(format!("Select tools for step {}.", subtask.id))];
        let (names, _) = self
            .ask(CallKey::new(RoleKind::ToolSelector, subtask.id, 0), messages, parse_tools)
            .map_err(|e| e.unwrap_or_else(RoleError::ToolSelection))?;
        let mut out: Vec<String> = Vec::new();
        for n in names {
            if !registry.serves(&n, subtask.kind) {
                tracing::warn!(tool = %n, kind = %subtask.kind, "dropping tool the registry cannot serve");
            } else if !out.contains(&n) {
                out.push(n);
            }
        }
        Ok(out)
    }

    fn programmer_messages(&self, ctx: &ProgrammerContext, local: &LocalMemory, request: &str) -> Result<Vec<ChatMessage>, RoleError> {
        let slots = BTreeMap::from([
            ("data_summary", ctx.data_summary.trim_end().to_string()),
            ("requirements", or_placeholder(ctx.requirements, "(none)")),
            ("history", or_placeholder(ctx.history, "(no completed steps yet)")),
            ("tool_docs", ctx.tool_docs.trim_end().to_string()),
        ]);
        let system = self.prompts.get(RoleKind::Programmer).render(&slots)?;
        let mut messages = vec![ChatMessage::system(system)];
        for e in local.entries() {
            messages.push(match e.role {
                RoleTag::System => ChatMessage::system(e.content.clone()),
                RoleTag::User => ChatMessage::user(e.content.clone()),
                RoleTag::Assistant => ChatMessage::assistant(e.content.clone()),
            });
        }
        messages.push(ChatMessage::user(request));
        Ok(messages)
    }

    fn program(
        &self,
        ctx: &ProgrammerContext,
        local: &mut LocalMemory,
        request: String,
        trial: u32,
        attempt: u32,
    ) -> Result<CodeSolution, RoleError> {
        if local.subtask_id() != ctx.subtask.id {
            return Err(RoleError::Precondition(format!(
                "local memory belongs to subtask {}, not {}",
                local.subtask_id(),
                ctx.subtask.id
            )));
        }
        let messages = self.programmer_messages(ctx, local, &request)?;
        let ((analysis, code), reply) = self
            .ask(CallKey::new(RoleKind::Programmer, ctx.subtask.id, attempt), messages, extract_code)
            .map_err(|e| e.unwrap_or_else(RoleError::Programmer))?;
        local.push(RoleTag::User, request);
        local.push(RoleTag::Assistant, reply);
        Ok(CodeSolution { code, analysis, trial, attempt })
    }

    /// First attempt of a trial. Records the request and reply in `local`.
    pub fn write_code(
        &self,
        ctx: &ProgrammerContext,
        local: &mut LocalMemory,
        trial: u32,
        n_trials: u32,
    ) -> Result<CodeSolution, RoleError> {
        let s = ctx.subtask;
        let mut request = format!("Step {}: {}\n{}\nTrial {trial} of {n_trials}.", s.id, s.title, s.description);
        if trial > 1 {
            request.push_str(" Take a different approach from the earlier trials.");
        }
        self.program(ctx, local, request, trial, 0)
    }

    /// Fix for a failed execution of `prev`.
    pub fn repair_code(
        &self,
        ctx: &ProgrammerContext,
        local: &mut LocalMemory,
        prev: &CodeSolution,
        outcome: &ExecutionOutcome,
    ) -> Result<CodeSolution, RoleError> {
        let (name, message, traceback) = match (&outcome.status, &outcome.exception) {
            (OutcomeStatus::Ok, _) => {
                return Err(RoleError::Precondition("repair requested for a cell that succeeded".into()))
            }
            (_, Some(e)) => (e.name.clone(), e.message.clone(), e.traceback.join("\n")),
            (OutcomeStatus::Timeout, None) => {
                ("TimeoutError".to_string(), "the cell exceeded its time limit".to_string(), String::new())
            }
            (OutcomeStatus::Exception, None) => ("Exception".to_string(), String::new(), String::new()),
        };
        let mut request = format!("The code raised {name}: {message}\n");
        if !traceback.is_empty() {
            request.push_str(&format!("Traceback:\n{traceback}\n"));
        }
        let stderr = outcome.stderr.trim_end();
        if !stderr.is_empty() {
            let tail: Vec<&str> = stderr.lines().rev().take(20).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            request.push_str(&format!("stderr (last lines):\n{}\n", tail.join("\n")));
        }
        request.push_str("Fix the code. The session state is as it was before the failing cell ran.");
        self.program(ctx, local, request, prev.trial, prev.attempt + 1)
    }

    pub(crate) fn evaluator_system(&self, subtask: &Subtask, requirements: &str) -> Result<String, RoleError> {
        let mut slots = subtask_slots(subtask, requirements);
        let methods = if self.methods.is_empty() {
            "(none)".to_string()
        } else {
            self.methods.iter().map(|m| format!("- {m}")).collect::<Vec<_>>().join("\n")
        };
        slots.insert("methods", methods);
        Ok(self.prompts.get(RoleKind::Evaluator).render(&slots)?)
    }
}
