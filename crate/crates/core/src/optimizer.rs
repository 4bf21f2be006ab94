//! Per-subtask iteration: trials of write, execute and repair, then
//! evaluation and commit of the chosen trial.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EvaluationMode, PolicyOverride};
use crate::memory::{GlobalMemory, LocalMemory, MemoryError};
use crate::roles::{CodeSolution, EvalSettings, Evaluation, ProgrammerContext, RoleError, Roles, TrialArtifacts};
use crate::sandbox::{ExecutionOutcome, SandboxError, Session};
use crate::task::{Subtask, SubtaskKind};
use crate::toolreg::ToolRegistry;

pub use crate::roles::{aggregate_annotations, plurality_consensus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPolicy {
    pub kind: SubtaskKind,
    pub max_trials: u32,
    pub max_fix_attempts: u32,
    pub evaluation_mode: EvaluationMode,
    /// Run each selected tool as its own trial (capped by `max_trials`).
    pub trial_per_tool: bool,
}

pub const DEFAULT_MAX_FIX_ATTEMPTS: u32 = 5;

/// Built-in policy for `kind` with any configured override applied.
pub fn resolve_policy(kind: SubtaskKind, overrides: &BTreeMap<SubtaskKind, PolicyOverride>) -> IterationPolicy {
    let (max_trials, evaluation_mode, trial_per_tool) = match kind {
        SubtaskKind::Preprocess => (1, EvaluationMode::ProgrammaticMetric, false),
        SubtaskKind::BatchCorrection => (3, EvaluationMode::VisionJudge, false),
        SubtaskKind::CellAnnotation => (6, EvaluationMode::Aggregation, true),
        SubtaskKind::TrajectoryInference => (3, EvaluationMode::VisionJudge, false),
        SubtaskKind::Visualization | SubtaskKind::Other => (1, EvaluationMode::None, false),
    };
    let mut p = IterationPolicy { kind, max_trials, max_fix_attempts: DEFAULT_MAX_FIX_ATTEMPTS, evaluation_mode, trial_per_tool };
    if let Some(o) = overrides.get(&kind) {
        if let Some(t) = o.max_trials {
            p.max_trials = t.max(1);
        }
        if let Some(f) = o.max_fix_attempts {
            p.max_fix_attempts = f;
        }
        if let Some(m) = o.evaluation_mode {
            p.evaluation_mode = m;
        }
    }
    p
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("cannot write step files under {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub solution: CodeSolution,
    pub outcome: ExecutionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub tools: Vec<String>,
    pub attempts: Vec<AttemptRecord>,
    /// Final attempt's solution, if the programmer produced any.
    pub solution: Option<CodeSolution>,
    pub outcome: Option<ExecutionOutcome>,
    pub evaluation_score: Option<f64>,
    pub selected: bool,
    /// Why the trial ended without a successful execution.
    pub error: Option<String>,
    /// Snapshot of the files the trial wrote, relative to the step directory.
    pub artifacts: Vec<String>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.outcome.as_ref().is_some_and(ExecutionOutcome::is_ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub subtask: Subtask,
    pub policy: IterationPolicy,
    pub status: StepStatus,
    pub tools: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub evaluation: Option<Evaluation>,
    pub chosen_trial: Option<u32>,
    pub final_code: Option<String>,
    /// Notes on degraded paths, e.g. an evaluation fallback.
    pub flags: Vec<String>,
    pub duration_secs: f64,
}

/// Shared state a subtask runs against.
pub struct StepContext<'a, 'r> {
    pub roles: &'a Roles<'r>,
    pub registry: &'a ToolRegistry,
    pub session: &'a mut Session,
    pub global: &'a mut GlobalMemory,
    pub data_summary: &'a str,
    pub requirements: &'a str,
    pub settings: EvalSettings,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OptimizerError + '_ {
    move |source| OptimizerError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OptimizerError> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Copies the files a trial produced out of the shared artifact directory.
fn snapshot_artifacts(
    session: &Session,
    produced: &[String],
    step_dir: &Path,
    trial_dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<String>), OptimizerError> {
    let mut abs = Vec::new();
    let mut rel = Vec::new();
    for a in produced {
        let src = session.workdir().join(a);
        if !src.is_file() {
            continue;
        }
        let inner = src.strip_prefix(session.artifact_dir()).unwrap_or(Path::new(a));
        let dst = trial_dir.join("artifacts").join(inner);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::copy(&src, &dst).map_err(io_err(&dst))?;
        rel.push(dst.strip_prefix(step_dir).unwrap_or(&dst).to_string_lossy().replace('\\', "/"));
        abs.push(dst);
    }
    Ok((abs, rel))
}

fn persist_trial(trial_dir: &Path, t: &TrialRecord) -> Result<(), OptimizerError> {
    std::fs::create_dir_all(trial_dir).map_err(io_err(trial_dir))?;
    if let Some(s) = &t.solution {
        let solution = format!("{}\n\n```python\n{}```\n", s.analysis.trim_end(), s.code);
        let p = trial_dir.join("solution.txt");
        std::fs::write(&p, solution).map_err(io_err(&p))?;
        let p = trial_dir.join("cell.code");
        std::fs::write(&p, &s.code).map_err(io_err(&p))?;
    }
    write_json(&trial_dir.join("outcome.json"), &t.attempts)
}

fn persist_trial_eval(trial_dir: &Path, t: &TrialRecord, eval: Option<&Evaluation>, flags: &[String]) -> Result<(), OptimizerError> {
    std::fs::create_dir_all(trial_dir).map_err(io_err(trial_dir))?;
    let doc = serde_json::json!({
        "trial": t.trial,
        "ok": t.is_ok(),
        "score": t.evaluation_score,
        "selected": t.selected,
        "method": eval.map(|e| e.method),
        "chosen_trial": eval.map(|e| e.chosen_trial),
        "rationale": eval.map(|e| e.rationale.clone()),
        "consensus": eval.and_then(|e| e.consensus.clone()),
        "flags": flags,
    });
    write_json(&trial_dir.join("eval.json"), &doc)
}

/// Progress notifications; `on_trial` sees the step record after every trial.
pub trait StepObserver {
    fn on_trial(&mut self, _step: &StepResult) {}
}

impl StepObserver for () {}

impl<F: FnMut(&StepResult)> StepObserver for F {
    fn on_trial(&mut self, step: &StepResult) {
        self(step)
    }
}

/// Runs one subtask under `policy`. A step whose trials all fail is returned
/// with status `Failed`; `Err` is reserved for conditions that end the run.
pub fn run_subtask(
    ctx: &mut StepContext,
    subtask: &Subtask,
    policy: IterationPolicy,
    step_dir: &Path,
    observer: &mut dyn StepObserver,
) -> Result<StepResult, OptimizerError> {
    let started = Instant::now();
    std::fs::create_dir_all(step_dir).map_err(io_err(step_dir))?;
    let mut step = StepResult {
        subtask: subtask.clone(),
        policy,
        status: StepStatus::Running,
        tools: Vec::new(),
        trials: Vec::new(),
        evaluation: None,
        chosen_trial: None,
        final_code: None,
        flags: Vec::new(),
        duration_secs: 0.0,
    };

    match ctx.roles.select_tools(subtask, ctx.requirements, ctx.registry) {
        Ok(t) => step.tools = t,
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => step.flags.push(format!("tool selection failed, continuing without tools: {e}")),
    }
    let n_trials = if policy.trial_per_tool && !step.tools.is_empty() {
        policy.max_trials.min(step.tools.len() as u32)
    } else {
        policy.max_trials
    };

    let history = ctx.global.render_context();
    let mut local = LocalMemory::new(subtask.id);
    let mut artifacts: Vec<TrialArtifacts> = Vec::new();

    for j in 1..=n_trials {
        if j > 1 {
            ctx.session.reset_to_committed()?;
        }
        let trial_tools: Vec<String> =
            if policy.trial_per_tool && !step.tools.is_empty() { vec![step.tools[j as usize - 1].clone()] } else { step.tools.clone() };
        let docs = ctx.registry.docs(&trial_tools).render();
        let pctx = ProgrammerContext {
            subtask,
            data_summary: ctx.data_summary,
            requirements: ctx.requirements,
            history: &history,
            tool_docs: &docs,
        };
        let mut record = TrialRecord {
            trial: j,
            tools: trial_tools.clone(),
            attempts: Vec::new(),
            solution: None,
            outcome: None,
            evaluation_score: None,
            selected: false,
            error: None,
            artifacts: Vec::new(),
        };
        let mut produced: Vec<String> = Vec::new();
        let mut current = match ctx.roles.write_code(&pctx, &mut local, j, n_trials) {
            Ok(s) => Some(s),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                record.error = Some(e.to_string());
                None
            }
        };
        while let Some(solution) = current.take() {
            let outcome = ctx.session.execute(&solution.code)?;
            for a in &outcome.artifacts {
                if !produced.contains(a) {
                    produced.push(a.clone());
                }
            }
            record.attempts.push(AttemptRecord { solution: solution.clone(), outcome: outcome.clone() });
            record.solution = Some(solution.clone());
            record.outcome = Some(outcome.clone());
            if outcome.is_ok() {
                record.error = None;
                break;
            }
            if solution.attempt >= policy.max_fix_attempts {
                record.error = Some(format!("still failing after {} repair attempts", policy.max_fix_attempts));
                break;
            }
            match ctx.roles.repair_code(&pctx, &mut local, &solution, &outcome) {
                Ok(s) => current = Some(s),
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        let trial_dir = step_dir.join(format!("trial_{j}"));
        persist_trial(&trial_dir, &record)?;
        let (files, rel) = snapshot_artifacts(ctx.session, &produced, step_dir, &trial_dir)?;
        record.artifacts = rel;
        artifacts.push(TrialArtifacts {
            trial: j,
            ok: record.is_ok(),
            files,
            label: trial_tools.join("+"),
        });
        step.trials.push(record);
        observer.on_trial(&step);
    }

    let first_ok = step.trials.iter().find(|t| t.is_ok()).map(|t| t.trial);
    let chosen = match first_ok {
        None => None,
        Some(fallback) => {
            match ctx.roles.evaluate(subtask, &artifacts, ctx.requirements, policy.evaluation_mode, ctx.settings) {
                Ok(ev) => {
                    for (t, s) in step.trials.iter_mut().zip(&ev.scores) {
                        t.evaluation_score = *s;
                    }
                    let c = ev.chosen_trial;
                    step.evaluation = Some(ev);
                    Some(c)
                }
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    step.flags.push(format!("evaluation failed, using first successful trial: {e}"));
                    Some(fallback)
                }
            }
        }
    };

    match chosen {
        Some(c) => {
            let t = &mut step.trials[c as usize - 1];
            t.selected = true;
            let code = t.solution.as_ref().expect("ok trial has a solution").code.clone();
            ctx.session.commit(&code)?;
            ctx.global.append_final_cell(subtask.id, subtask.title.clone(), code.clone())?;
            step.chosen_trial = Some(c);
            step.final_code = Some(code);
            step.status = StepStatus::Completed;
        }
        None => {
            ctx.session.reset_to_committed()?;
            step.status = StepStatus::Failed;
        }
    }
    for t in &step.trials {
        persist_trial_eval(&step_dir.join(format!("trial_{}", t.trial)), t, step.evaluation.as_ref(), &step.flags)?;
    }
    step.duration_secs = started.elapsed().as_secs_f64();
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnnotationJudge;
    use crate::gateway::{CallKey, Gateway, RoleKind, ScriptedBackend};
    use crate::metrics::BatchWeights;
    use crate::roles::PromptSet;
    use crate::sandbox::{start_session, SessionOptions};

    #[test]
    fn default_policies() {
        let none = BTreeMap::new();
        assert_eq!(resolve_policy(SubtaskKind::Preprocess, &none).max_trials, 1);
        assert_eq!(resolve_policy(SubtaskKind::BatchCorrection, &none).max_trials, 3);
        assert_eq!(resolve_policy(SubtaskKind::TrajectoryInference, &none).max_trials, 3);
        let a = resolve_policy(SubtaskKind::CellAnnotation, &none);
        assert!(a.trial_per_tool);
        assert_eq!(a.evaluation_mode, EvaluationMode::Aggregation);
        let o = resolve_policy(SubtaskKind::Other, &none);
        assert_eq!((o.max_trials, o.evaluation_mode, o.max_fix_attempts), (1, EvaluationMode::None, 5));
    }

    #[test]
    fn overrides_apply() {
        let over = BTreeMap::from([(
            SubtaskKind::TrajectoryInference,
            PolicyOverride { max_trials: Some(5), max_fix_attempts: Some(0), evaluation_mode: Some(EvaluationMode::ProgrammaticMetric) },
        )]);
        let p = resolve_policy(SubtaskKind::TrajectoryInference, &over);
        assert_eq!((p.max_trials, p.max_fix_attempts, p.evaluation_mode), (5, 0, EvaluationMode::ProgrammaticMetric));
    }

    fn data(dir: &Path) -> PathBuf {
        let p = dir.join("d.csv");
        std::fs::write(&p, "cell,g1,g2\nc1,1,2\nc2,3,4\n").unwrap();
        p
    }

    fn code(body: &str) -> String {
        format!("ok\n```python\n{body}\n```")
    }

    #[test]
    fn repairs_then_commits() {
        let dir = tempfile::tempdir().unwrap();
        let mut session = start_session(&dir.path().join("work"), &data(dir.path()), SessionOptions::default()).unwrap();
        let b = ScriptedBackend::new();
        b.push(CallKey::new(RoleKind::ToolSelector, 1, 0), "[]");
        b.push(CallKey::new(RoleKind::Programmer, 1, 0), code("x = missing"));
        b.push(CallKey::new(RoleKind::Programmer, 1, 1), code("x = also_missing"));
        b.push(CallKey::new(RoleKind::Programmer, 1, 2), code("x = 41 + 1"));
        let g = Gateway::new(Box::new(b));
        let prompts = PromptSet::defaults();
        let roles = Roles { gateway: &g, prompts: &prompts, max_parse_retries: 0, methods: &[] };
        let registry = ToolRegistry::with_default_catalog();
        let mut global = GlobalMemory::new();
        let mut ctx = StepContext {
            roles: &roles,
            registry: &registry,
            session: &mut session,
            global: &mut global,
            data_summary: "AnnData",
            requirements: "",
            settings: EvalSettings { weights: BatchWeights::default(), judge: AnnotationJudge::Plurality },
        };
        let st = Subtask { id: 1, title: "t".into(), description: "d".into(), kind: SubtaskKind::Other };
        let policy = resolve_policy(SubtaskKind::Other, &BTreeMap::new());
        let mut seen = 0;
        let mut obs = |_: &StepResult| seen += 1;
        let step = run_subtask(&mut ctx, &st, policy, &dir.path().join("step_1"), &mut obs).unwrap();
        assert_eq!(seen, 1);
        assert_eq!(step.status, StepStatus::Completed);
        let t = &step.trials[0];
        assert_eq!(t.attempts.len(), 3);
        assert_eq!(t.solution.as_ref().unwrap().attempt, 2);
        assert!(t.selected);
        assert_eq!(global.len(), 1);
        let out = session.execute("print(x)").unwrap();
        assert_eq!(out.stdout, "42\n");
        let repair2 = &g.transcript()[3];
        let all: String = repair2.messages.iter().map(|m| m.content.as_str()).collect();
        assert!(all.contains("'missing'") && all.contains("'also_missing'"));
        for f in ["solution.txt", "cell.code", "outcome.json", "eval.json"] {
            assert!(dir.path().join("step_1/trial_1").join(f).is_file(), "{f}");
        }
    }

    #[test]
    fn all_trials_failing_marks_step_failed() {
        let dir = tempfile::tempdir().unwrap();
        let mut session = start_session(&dir.path().join("work"), &data(dir.path()), SessionOptions::default()).unwrap();
        let b = ScriptedBackend::new();
        b.push(CallKey::new(RoleKind::ToolSelector, 1, 0), "[]");
        b.push(CallKey::new(RoleKind::Programmer, 1, 0), code("raise ValueError('no')"));
        b.push(CallKey::new(RoleKind::Programmer, 1, 1), code("raise ValueError('still no')"));
        let g = Gateway::new(Box::new(b));
        let prompts = PromptSet::defaults();
        let roles = Roles { gateway: &g, prompts: &prompts, max_parse_retries: 0, methods: &[] };
        let registry = ToolRegistry::with_default_catalog();
        let mut global = GlobalMemory::new();
        let mut ctx = StepContext {
            roles: &roles,
            registry: &registry,
            session: &mut session,
            global: &mut global,
            data_summary: "AnnData",
            requirements: "",
            settings: EvalSettings { weights: BatchWeights::default(), judge: AnnotationJudge::Plurality },
        };
        let st = Subtask { id: 1, title: "t".into(), description: "d".into(), kind: SubtaskKind::Other };
        let mut policy = resolve_policy(SubtaskKind::Other, &BTreeMap::new());
        policy.max_fix_attempts = 1;
        let step = run_subtask(&mut ctx, &st, policy, &dir.path().join("step_1"), &mut ()).unwrap();
        assert_eq!(step.status, StepStatus::Failed);
        assert_eq!(step.trials[0].attempts.len(), 2);
        assert!(global.is_empty());
        assert!(session.committed_cells().is_empty());
    }
}
