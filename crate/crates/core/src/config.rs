//! Run configuration, loaded from TOML. Unknown keys are rejected and every
//! omitted key has a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::BatchWeights;
use crate::task::SubtaskKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    ProgrammaticMetric,
    VisionJudge,
    Aggregation,
    None,
}

impl EvaluationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ProgrammaticMetric => "programmatic_metric",
            Self::VisionJudge => "vision_judge",
            Self::Aggregation => "aggregation",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationJudge {
    /// Ask the evaluator role for a consensus.
    #[default]
    Llm,
    /// Deterministic plurality vote.
    Plurality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub vision_model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_parse_retries: u32,
    pub request_timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            vision_model: "gpt-4o".into(),
            temperature: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            max_parse_retries: 2,
            request_timeout_secs: 120,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    /// Worker command line; `--artifacts DIR` is appended. Absent means the
    /// in-process shim.
    pub worker: Option<Vec<String>>,
    pub cell_timeout_secs: f64,
    pub startup_timeout_secs: f64,
    pub grace_secs: f64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self { worker: None, cell_timeout_secs: 600.0, startup_timeout_secs: 30.0, grace_secs: 2.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverride {
    pub max_trials: Option<u32>,
    pub max_fix_attempts: Option<u32>,
    pub evaluation_mode: Option<EvaluationMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub w_batch: f64,
    pub w_bio: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let w = BatchWeights::default();
        Self { w_batch: w.batch, w_bio: w.bio }
    }
}

impl MetricsConfig {
    pub fn weights(&self) -> BatchWeights {
        BatchWeights { batch: self.w_batch, bio: self.w_bio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub annotation_judge: AnnotationJudge,
    /// Per-tool documentation budget handed to the programmer.
    pub tool_doc_bytes: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { annotation_judge: AnnotationJudge::Llm, tool_doc_bytes: 8 * 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorConfig {
    /// Evaluation methods advertised to the evaluator role.
    pub methods: Vec<String>,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            methods: vec![
                "programmatic_metric: read a metrics table written by the trial and compare overall scores".into(),
                "vision_judge: rank the plots produced by each trial".into(),
                "aggregation: merge per-cluster labels from several annotators into a consensus".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub llm: LlmConfig,
    pub sandbox: SandboxConfig,
    pub policies: BTreeMap<SubtaskKind, PolicyOverride>,
    pub metrics: MetricsConfig,
    pub optimizer: OptimizerConfig,
    pub evaluator: EvaluatorConfig,
    /// Extra tool descriptors (`*.md`), added to the built-in catalog.
    pub tools_dir: Option<PathBuf>,
    /// Overrides for `<role>.txt` templates and `<role>.notes.txt` notes.
    pub prompts_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            llm: LlmConfig::default(),
            sandbox: SandboxConfig::default(),
            policies: BTreeMap::new(),
            metrics: MetricsConfig::default(),
            optimizer: OptimizerConfig::default(),
            evaluator: EvaluatorConfig::default(),
            tools_dir: None,
            prompts_dir: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.tools_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompts_dir.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.llm.temperature.is_finite() && self.llm.temperature >= 0.0) {
            return bad(format!("llm.temperature must be >= 0, got {}", self.llm.temperature));
        }
        if self.llm.max_attempts == 0 {
            return bad("llm.max_attempts must be >= 1".into());
        }
        for (name, v) in [
            ("sandbox.cell_timeout_secs", self.sandbox.cell_timeout_secs),
            ("sandbox.startup_timeout_secs", self.sandbox.startup_timeout_secs),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.sandbox.grace_secs.is_finite() && self.sandbox.grace_secs >= 0.0) {
            return bad("sandbox.grace_secs must be >= 0".into());
        }
        if let Some(cmd) = &self.sandbox.worker {
            if cmd.is_empty() {
                return bad("sandbox.worker must name a program".into());
            }
        }
        for (kind, o) in &self.policies {
            if o.max_trials == Some(0) {
                return bad(format!("policies.{kind}.max_trials must be >= 1"));
            }
        }
        let (wb, wo) = (self.metrics.w_batch, self.metrics.w_bio);
        if !(wb.is_finite() && wo.is_finite() && wb >= 0.0 && wo >= 0.0 && wb + wo > 0.0) {
            return bad("metrics weights must be non-negative with a positive sum".into());
        }
        if self.optimizer.tool_doc_bytes == 0 {
            return bad("optimizer.tool_doc_bytes must be > 0".into());
        }
        Ok(())
    }
}
