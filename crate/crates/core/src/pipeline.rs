//! End-to-end run: plan, execute every subtask, persist the run directory,
//! and replay a recorded run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::data::{summarize_data, DataError, DataSummary};
use crate::gateway::{
    read_transcript, Gateway, GatewayError, HttpBackend, HttpSettings, ReplayBackend, ScriptedBackend, UreqTransport,
};
use crate::memory::GlobalMemory;
use crate::optimizer::{resolve_policy, run_subtask, OptimizerError, StepContext, StepObserver, StepResult, StepStatus};
use crate::roles::{EvalSettings, PromptSet, RoleError, Roles, TemplateError};
use crate::sandbox::{start_session, SandboxError, SessionOptions};
use crate::task::{Plan, RequestError, Subtask, TaskRequest};
use crate::toolreg::{RegistrationError, ToolRegistry};

pub const REQUEST_FILE: &str = "request.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const RECORD_FILE: &str = "run.json";
pub const PLAN_FILE: &str = "plan.json";
pub const MEMORY_FILE: &str = "memory.json";
pub const REPORT_FILE: &str = "report.md";
pub const NOTEBOOK_FILE: &str = "run.nb.json";
pub const WORK_DIR: &str = "work";
pub const REPLAY_DIR: &str = "replay";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Tools(#[from] RegistrationError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("run directory {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    BadRunDir { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Partial,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Partial => "partial",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub status: RunStatus,
    pub request: TaskRequest,
    pub summary: Option<DataSummary>,
    pub plan: Option<Plan>,
    pub step_results: Vec<StepResult>,
    pub error: Option<String>,
    pub backend: String,
    pub kernel: Option<String>,
    pub llm_calls: usize,
    pub live_llm_calls: usize,
    pub duration_secs: f64,
}

impl RunRecord {
    /// The record with run-specific values cleared: id, timestamps,
    /// durations, and which backend served the replies.
    pub fn normalized(&self) -> RunRecord {
        let mut r = self.clone();
        r.run_id = String::new();
        r.started_unix_ms = 0;
        r.finished_unix_ms = None;
        r.duration_secs = 0.0;
        r.backend = String::new();
        r.live_llm_calls = 0;
        for s in &mut r.step_results {
            s.duration_secs = 0.0;
            for t in &mut s.trials {
                if let Some(o) = t.outcome.as_mut() {
                    o.duration_secs = 0.0;
                }
                for a in &mut t.attempts {
                    a.outcome.duration_secs = 0.0;
                }
            }
        }
        r
    }

    pub fn completed_steps(&self) -> usize {
        self.step_results.iter().filter(|s| s.status == StepStatus::Completed).count()
    }

    pub fn read(run_dir: &Path) -> Result<RunRecord, PipelineError> {
        let path = run_dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::BadRunDir { path, message: e.to_string() })
    }
}

/// Progress hooks for callers such as the CLI.
pub trait RunObserver {
    fn on_plan(&mut self, _plan: &Plan) {}
    fn on_step_start(&mut self, _subtask: &Subtask) {}
    fn on_trial(&mut self, _step: &StepResult) {}
    fn on_step_end(&mut self, _step: &StepResult) {}
}

impl RunObserver for () {}

/// Where replies come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmSource {
    Live,
    Scripted(PathBuf),
    Replay { transcript: PathBuf, strict: bool },
}

impl LlmSource {
    /// `live`, `scripted:PATH` or `replay:PATH` (`replay-strict:PATH` checks
    /// request fingerprints too).
    pub fn parse(spec: &str) -> Result<Self, String> {
        match spec.split_once(':') {
            None if spec == "live" => Ok(Self::Live),
            Some(("scripted", p)) if !p.is_empty() => Ok(Self::Scripted(p.into())),
            Some(("replay", p)) if !p.is_empty() => Ok(Self::Replay { transcript: p.into(), strict: false }),
            Some(("replay-strict", p)) if !p.is_empty() => Ok(Self::Replay { transcript: p.into(), strict: true }),
            _ => Err(format!("unknown LLM source {spec:?}; expected live, scripted:PATH or replay[-strict]:PATH")),
        }
    }

    pub fn build(&self, config: &Config) -> Result<Gateway, GatewayError> {
        Ok(match self {
            Self::Live => {
                let llm = &config.llm;
                let key = std::env::var(&llm.api_key_env).map_err(|_| GatewayError::MissingApiKey(llm.api_key_env.clone()))?;
                let settings = HttpSettings {
                    base_url: llm.base_url.clone(),
                    model: llm.model.clone(),
                    vision_model: llm.vision_model.clone(),
                    temperature: llm.temperature,
                    api_key: Some(key),
                    max_attempts: llm.max_attempts,
                    backoff: Duration::from_millis(500),
                };
                let transport = UreqTransport::new(Duration::from_secs(llm.request_timeout_secs));
                Gateway::new(Box::new(HttpBackend::new(settings, Box::new(transport))))
            }
            Self::Scripted(p) => Gateway::new(Box::new(ScriptedBackend::from_file(p)?)),
            Self::Replay { transcript, strict } => Gateway::new(Box::new(ReplayBackend::from_file(transcript, *strict)?)),
        })
    }
}

/// Built-in catalog plus any descriptors in `config.tools_dir`.
pub fn build_registry(config: &Config) -> Result<ToolRegistry, RegistrationError> {
    let mut reg = ToolRegistry::with_default_catalog().with_doc_budget(config.optimizer.tool_doc_bytes);
    if let Some(dir) = &config.tools_dir {
        reg.load_dir(dir)?;
    }
    Ok(reg)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

struct Run<'a> {
    dir: &'a Path,
    record: RunRecord,
    started: Instant,
    gateway: &'a Gateway,
}

impl Run<'_> {
    fn save(&mut self) -> Result<(), PipelineError> {
        let t = self.gateway.transcript();
        self.record.llm_calls = t.len();
        self.record.live_llm_calls = self.gateway.live_calls();
        self.record.duration_secs = self.started.elapsed().as_secs_f64();
        write_json(&self.dir.join(RECORD_FILE), &self.record)
    }

    fn save_with_step(&mut self, step: &StepResult) -> Result<(), PipelineError> {
        self.record.step_results.push(step.clone());
        let r = self.save();
        self.record.step_results.pop();
        r
    }

    fn finish(&mut self, status: RunStatus, error: Option<String>, memory: &GlobalMemory) -> Result<(), PipelineError> {
        self.record.status = status;
        if error.is_some() {
            self.record.error = error;
        }
        self.record.finished_unix_ms = Some(now_ms());
        write_json(&self.dir.join(MEMORY_FILE), memory)?;
        let report = self.dir.join(REPORT_FILE);
        std::fs::write(&report, render_report(&self.record)).map_err(io_err(&report))?;
        self.save()
    }
}

/// Executes `request` end to end, writing the run directory as it goes.
/// Returns `Err` for problems found before the run starts and for replay
/// divergence; every other failure is reported through the record's status.
pub fn run_pipeline(
    request: &TaskRequest,
    config: &Config,
    gateway: Gateway,
    registry: &ToolRegistry,
    run_dir: &Path,
    observer: &mut dyn RunObserver,
) -> Result<RunRecord, PipelineError> {
    config.validate()?;
    let mut request = request.clone();
    request.validate()?;
    request.data_path = std::path::absolute(&request.data_path).map_err(io_err(&request.data_path))?;
    let prompts = PromptSet::load(config.prompts_dir.as_deref())?;
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    write_json(&run_dir.join(REQUEST_FILE), &request)?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_toml()).map_err(io_err(&cfg_path))?;
    let summary = summarize_data(&request.data_path)?;
    let gateway = gateway.record_to(&run_dir.join(TRANSCRIPT_FILE))?;

    let started_unix_ms = now_ms();
    let digest = crate::gateway::sha256_hex(serde_json::to_string(&request).expect("request serializes").as_bytes());
    let mut run = Run {
        dir: run_dir,
        record: RunRecord {
            run_id: format!("run-{started_unix_ms}-{}", &digest[..8]),
            started_unix_ms,
            finished_unix_ms: None,
            status: RunStatus::Running,
            request: request.clone(),
            summary: Some(summary.clone()),
            plan: None,
            step_results: Vec::new(),
            error: None,
            backend: gateway.backend_id().to_string(),
            kernel: None,
            llm_calls: 0,
            live_llm_calls: 0,
            duration_secs: 0.0,
        },
        started: Instant::now(),
        gateway: &gateway,
    };
    run.save()?;
    let mut memory = GlobalMemory::new();

    let mut session = match start_session(&run_dir.join(WORK_DIR), &request.data_path, SessionOptions::from(&config.sandbox)) {
        Ok(s) => s,
        Err(e) => {
            run.finish(RunStatus::Failed, Some(format!("sandbox: {e}")), &memory)?;
            return Ok(run.record);
        }
    };
    run.record.kernel = Some(session.kernel_name());
    if let Some(e) = &session.bootstrap().outcome.exception {
        run.finish(RunStatus::Failed, Some(format!("loading the dataset failed: {}: {}", e.name, e.message)), &memory)?;
        return Ok(run.record);
    }

    let requirements = request.requirements.clone().unwrap_or_default();
    let roles = Roles {
        gateway: &gateway,
        prompts: &prompts,
        max_parse_retries: config.llm.max_parse_retries,
        methods: &config.evaluator.methods,
    };
    let plan = match roles.plan(&request, &summary.text_repr) {
        Ok(p) => p,
        Err(RoleError::Gateway(e @ (GatewayError::ReplayMismatch { .. } | GatewayError::ReplayExhausted(_)))) => {
            run.finish(RunStatus::Failed, Some(e.to_string()), &memory)?;
            return Err(e.into());
        }
        Err(e) => {
            run.finish(RunStatus::Failed, Some(e.to_string()), &memory)?;
            return Ok(run.record);
        }
    };
    write_json(&run_dir.join(PLAN_FILE), &plan)?;
    run.record.plan = Some(plan.clone());
    run.save()?;
    observer.on_plan(&plan);

    let settings = EvalSettings { weights: config.metrics.weights(), judge: config.optimizer.annotation_judge };
    let mut status = RunStatus::Completed;
    let mut error = None;
    for subtask in &plan.subtasks {
        observer.on_step_start(subtask);
        let policy = resolve_policy(subtask.kind, &config.policies);
        let step_dir = run_dir.join("steps").join(format!("step_{}", subtask.id));
        let mut ctx = StepContext {
            roles: &roles,
            registry,
            session: &mut session,
            global: &mut memory,
            data_summary: &summary.text_repr,
            requirements: &requirements,
            settings,
        };
        struct Relay<'o, 'r, 'g> {
            run: &'r mut Run<'g>,
            observer: &'o mut dyn RunObserver,
            io: Option<PipelineError>,
        }
        impl StepObserver for Relay<'_, '_, '_> {
            fn on_trial(&mut self, step: &StepResult) {
                if let Err(e) = self.run.save_with_step(step) {
                    self.io.get_or_insert(e);
                }
                self.observer.on_trial(step);
            }
        }
        let mut relay = Relay { run: &mut run, observer, io: None };
        let result = run_subtask(&mut ctx, subtask, policy, &step_dir, &mut relay);
        if let Some(e) = relay.io {
            return Err(e);
        }
        match result {
            Ok(step) => {
                let failed = step.status == StepStatus::Failed;
                observer.on_step_end(&step);
                run.record.step_results.push(step);
                run.save()?;
                if failed {
                    status = RunStatus::Partial;
                    error = Some(format!("step {} ({}) failed in every trial", subtask.id, subtask.title));
                    break;
                }
            }
            Err(OptimizerError::Role(RoleError::Gateway(
                e @ (GatewayError::ReplayMismatch { .. } | GatewayError::ReplayExhausted(_)),
            ))) => {
                run.finish(RunStatus::Failed, Some(e.to_string()), &memory)?;
                return Err(e.into());
            }
            Err(OptimizerError::Io { path, source }) => return Err(PipelineError::Io { path, source }),
            Err(e) => {
                status = if run.record.completed_steps() > 0 { RunStatus::Partial } else { RunStatus::Failed };
                error = Some(format!("step {}: {e}", subtask.id));
                break;
            }
        }
    }
    match session.export_notebook(&run_dir.join(NOTEBOOK_FILE)) {
        Ok(_) => {}
        Err(SandboxError::Io(source)) => return Err(PipelineError::Io { path: run_dir.join(NOTEBOOK_FILE), source }),
        Err(e) => error = Some(format!("notebook export: {e}")),
    }
    session.shutdown();
    run.finish(status, error, &memory)?;
    Ok(run.record)
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Fresh directory name under `config.output_dir`.
pub fn new_run_dir(config: &Config) -> PathBuf {
    config.output_dir.join(format!("run-{}", now_ms()))
}

/// Re-renders `report.md` from the saved `run.json`.
pub fn rewrite_report(run_dir: &Path) -> Result<PathBuf, PipelineError> {
    let record = RunRecord::read(run_dir)?;
    let path = run_dir.join(REPORT_FILE);
    std::fs::write(&path, render_report(&record)).map_err(io_err(&path))?;
    Ok(path)
}

/// Human-readable summary of a run.
pub fn render_report(r: &RunRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Analysis report\n");
    let _ = writeln!(out, "- Status: **{}**", r.status.as_str());
    let _ = writeln!(out, "- Task: {}", r.request.task_text.trim());
    if let Some(req) = r.request.requirements.as_deref().filter(|s| !s.trim().is_empty()) {
        let _ = writeln!(out, "- Requirements: {}", req.trim());
    }
    let _ = writeln!(out, "- Data: `{}`", r.request.data_path.display());
    if let Some(s) = &r.summary {
        let _ = writeln!(out, "- Cells × genes: {} × {}", s.n_obs, s.n_var);
    }
    let _ = writeln!(out, "- LLM calls: {}", r.llm_calls);
    if let Some(e) = &r.error {
        let _ = writeln!(out, "- Error: {e}");
    }
    let Some(plan) = &r.plan else { return out };
    let _ = writeln!(out, "\n## Plan\n");
    if !plan.rationale.trim().is_empty() {
        let _ = writeln!(out, "{}\n", plan.rationale.trim());
    }
    let _ = writeln!(out, "| Step | Title | Kind | Result |");
    let _ = writeln!(out, "|---|---|---|---|");
    for s in &plan.subtasks {
        let result = match r.step_results.iter().find(|x| x.subtask.id == s.id) {
            Some(x) if x.status == StepStatus::Completed => format!("trial {} chosen", x.chosen_trial.unwrap_or(0)),
            Some(_) => "failed".to_string(),
            None => "not run".to_string(),
        };
        let _ = writeln!(out, "| {} | {} | {} | {} |", s.id, s.title, s.kind, result);
    }
    for step in &r.step_results {
        let s = &step.subtask;
        let _ = writeln!(out, "\n## Step {}: {}\n", s.id, s.title);
        let _ = writeln!(out, "{}\n", s.description.trim());
        let _ = writeln!(
            out,
            "Policy: up to {} trial(s), {} repair attempt(s) each, evaluation `{}`.",
            step.policy.max_trials,
            step.policy.max_fix_attempts,
            step.policy.evaluation_mode.as_str()
        );
        if !step.tools.is_empty() {
            let _ = writeln!(out, "Tools: {}.", step.tools.join(", "));
        }
        let _ = writeln!(out, "\n| Trial | Tools | Attempts | Outcome | Score | Selected |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for t in &step.trials {
            let outcome = match (&t.outcome, &t.error) {
                (Some(o), _) if o.is_ok() => "ok".to_string(),
                (Some(o), _) => o.exception.as_ref().map_or_else(|| "timeout".to_string(), |e| e.name.clone()),
                (None, Some(e)) => format!("no code ({e})"),
                (None, None) => "no code".to_string(),
            };
            let tools = if t.tools.is_empty() { "-".to_string() } else { t.tools.join(", ") };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                t.trial,
                tools,
                t.attempts.len(),
                outcome,
                fmt_score(t.evaluation_score),
                if t.selected { "yes" } else { "" }
            );
        }
        if let Some(ev) = &step.evaluation {
            let _ = writeln!(out, "\nEvaluation ({}): {}", ev.method.as_str(), ev.rationale);
            if let Some(c) = &ev.consensus {
                let _ = writeln!(out, "\n| Cluster | Consensus label |\n|---|---|");
                for (k, v) in c {
                    let _ = writeln!(out, "| {k} | {v} |");
                }
            }
        }
        for f in &step.flags {
            let _ = writeln!(out, "\n> {f}");
        }
        if let Some(code) = &step.final_code {
            let _ = writeln!(out, "\n```python\n{}\n```", code.trim_end());
        }
    }
    out
}

/// Outcome of re-running a recorded run against its transcript.
#[derive(Debug)]
pub struct ReplayReport {
    pub original: RunRecord,
    pub reproduced: RunRecord,
    /// JSON paths where the normalized records differ.
    pub differences: Vec<String>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.differences.is_empty()
    }
}

fn diff_json(a: &serde_json::Value, b: &serde_json::Value, path: &str, out: &mut Vec<String>) {
    use serde_json::Value;
    if out.len() >= 20 {
        return;
    }
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                match (x.get(k), y.get(k)) {
                    (Some(p), Some(q)) => diff_json(p, q, &format!("{path}.{k}"), out),
                    _ => out.push(format!("{path}.{k}")),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                diff_json(p, q, &format!("{path}[{i}]"), out);
            }
        }
        _ if a != b => out.push(path.to_string()),
        _ => {}
    }
}

/// Re-executes the run in `run_dir` from its saved request, config and
/// transcript, under `run_dir/replay`, and compares normalized records.
pub fn replay_run(run_dir: &Path, strict: bool, registry: Option<&ToolRegistry>) -> Result<ReplayReport, PipelineError> {
    let original = RunRecord::read(run_dir)?;
    let req_path = run_dir.join(REQUEST_FILE);
    let text = std::fs::read_to_string(&req_path).map_err(io_err(&req_path))?;
    let request: TaskRequest =
        serde_json::from_str(&text).map_err(|e| PipelineError::BadRunDir { path: req_path, message: e.to_string() })?;
    let config = Config::from_file(&run_dir.join(CONFIG_FILE))?;
    let entries = read_transcript(&run_dir.join(TRANSCRIPT_FILE))?;
    let gateway = Gateway::new(Box::new(ReplayBackend::new(entries, strict)));
    let built;
    let registry = match registry {
        Some(r) => r,
        None => {
            built = build_registry(&config)?;
            &built
        }
    };
    let out = run_dir.join(REPLAY_DIR);
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(io_err(&out))?;
    }
    let reproduced = run_pipeline(&request, &config, gateway, registry, &out, &mut ())?;
    let a = serde_json::to_value(original.normalized()).expect("record serializes");
    let b = serde_json::to_value(reproduced.normalized()).expect("record serializes");
    let mut differences = Vec::new();
    diff_json(&a, &b, "$", &mut differences);
    Ok(ReplayReport { original, reproduced, differences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llm_source_specs() {
        assert_eq!(LlmSource::parse("live").unwrap(), LlmSource::Live);
        assert_eq!(LlmSource::parse("scripted:a.jsonl").unwrap(), LlmSource::Scripted("a.jsonl".into()));
        assert_eq!(
            LlmSource::parse("replay-strict:t").unwrap(),
            LlmSource::Replay { transcript: "t".into(), strict: true }
        );
        assert!(LlmSource::parse("scripted:").is_err());
        assert!(LlmSource::parse("openai").is_err());
    }

    #[test]
    fn json_diff_paths() {
        let a = serde_json::json!({"x": 1, "y": [1, 2], "z": {"k": "v"}});
        let b = serde_json::json!({"x": 1, "y": [1, 3], "z": {"k": "w"}, "extra": true});
        let mut d = Vec::new();
        diff_json(&a, &b, "$", &mut d);
        assert_eq!(d, ["$.extra", "$.y[1]", "$.z.k"]);
    }
}
