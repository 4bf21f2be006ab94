//! `cellpilot`: run, replay and score single-cell analysis pipelines.
//!
//! Exit codes: 0 success, 1 failed run or runtime error, 2 partial run,
//! 3 replay divergence, 64 usage error, 65 malformed input file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use cellpilot_core::config::Config;
use cellpilot_core::gateway::GatewayError;
use cellpilot_core::metrics::io::{
    score_annotation_file, score_batch_files, score_trajectory_files, BatchFiles, ScoreError, TrajectoryFiles,
};
use cellpilot_core::metrics::trajectory::CorDistOptions;
use cellpilot_core::metrics::BatchWeights;
use cellpilot_core::optimizer::{StepResult, StepStatus};
use cellpilot_core::pipeline::{
    build_registry, new_run_dir, replay_run, rewrite_report, run_pipeline, LlmSource, PipelineError, RunObserver,
    RunStatus, REPORT_FILE,
};
use cellpilot_core::sandbox::serve_stdio;
use cellpilot_core::task::{Plan, Subtask, TaskRequest};

const EXIT_FAILED: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Parser)]
#[command(name = "cellpilot", version, about = "Multi-role LLM pipeline for single-cell analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and execute an analysis task.
    Run(RunArgs),
    /// Re-execute a recorded run against its transcript.
    Replay {
        run_dir: PathBuf,
        /// Also require every request fingerprint to match.
        #[arg(long)]
        strict: bool,
    },
    /// Score result files without running a pipeline.
    Score {
        #[command(subcommand)]
        kind: ScoreCommand,
    },
    /// Re-render report.md from run.json.
    Report { run_dir: PathBuf },
    /// Serve the kernel line protocol on stdio.
    Worker {
        #[arg(long)]
        artifacts: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Expression matrix (CSV, cells x genes).
    #[arg(long)]
    data: PathBuf,
    /// Free-text analysis task.
    #[arg(long)]
    task: String,
    #[arg(long)]
    requirements: Option<String>,
    #[arg(long)]
    data_description: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `live`, `scripted:PATH`, `replay:PATH` or `replay-strict:PATH`.
    #[arg(long, default_value = "live")]
    llm: String,
    /// Run directory; defaults to a fresh directory under the configured output dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScoreCommand {
    /// Annotation consistency from `cluster,match` or `cluster,predicted,expected` rows.
    Annotation {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ten integration metrics and the weighted overall.
    Batch(BatchArgs),
    /// Trajectory topology, branch, position and feature agreement.
    Trajectory(TrajectoryArgs),
}

#[derive(Args)]
struct BatchArgs {
    /// Precomputed `metric,value` rows; replaces the raw inputs.
    #[arg(long)]
    values: Option<PathBuf>,
    /// Integrated embedding `cell_id,dim1..dimd`.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Unintegrated embedding, for PCR comparison.
    #[arg(long)]
    embedding_before: Option<PathBuf>,
    /// `cell_id,batch`
    #[arg(long)]
    batches: Option<PathBuf>,
    /// `cell_id,cell_type`
    #[arg(long)]
    cell_types: Option<PathBuf>,
    /// `cell_id,cluster`
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    k: usize,
    /// Weight of the batch-removal group; the bio group gets the rest.
    #[arg(long, default_value_t = 0.4)]
    w_batch: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long)]
    ref_network: PathBuf,
    #[arg(long)]
    ref_positions: PathBuf,
    #[arg(long)]
    pred_network: PathBuf,
    #[arg(long)]
    pred_positions: PathBuf,
    /// Reference `feature,score` importance.
    #[arg(long)]
    ref_importance: Option<PathBuf>,
    /// Predicted `feature,score` importance.
    #[arg(long)]
    pred_importance: Option<PathBuf>,
    /// Expression matrix used to derive importance when no importance files are given.
    #[arg(long)]
    expression: Option<PathBuf>,
    /// Reference root milestone, with --expression.
    #[arg(long)]
    root: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("CELLPILOT_LOG"))
        .init();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay { run_dir, strict } => cmd_replay(&run_dir, strict),
        Command::Score { kind } => cmd_score(kind),
        Command::Report { run_dir } => cmd_report(&run_dir),
        Command::Worker { artifacts } => serve_stdio(&artifacts).map(|()| 0).context("worker failed"),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

struct Progress;

impl RunObserver for Progress {
    fn on_plan(&mut self, plan: &Plan) {
        println!("plan ({} steps):", plan.subtasks.len());
        for s in &plan.subtasks {
            println!("  {}. [{}] {}", s.id, s.kind, s.title);
        }
    }

    fn on_step_start(&mut self, subtask: &Subtask) {
        println!("step {}: {}", subtask.id, subtask.title);
    }

    fn on_trial(&mut self, step: &StepResult) {
        if let Some(t) = step.trials.last() {
            let state = if t.is_ok() { "ok" } else { "failed" };
            println!("  trial {}: {state} after {} attempt(s)", t.trial, t.attempts.len());
        }
    }

    fn on_step_end(&mut self, step: &StepResult) {
        match (step.status, step.chosen_trial) {
            (StepStatus::Completed, Some(t)) => println!("  chose trial {t}"),
            (StepStatus::Completed, None) => println!("  completed"),
            _ => println!("  step failed"),
        }
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<u8> {
    let source = match LlmSource::parse(&args.llm) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(EXIT_USAGE);
        }
    };
    let config = match &args.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let mut request = TaskRequest::new(&args.data, &args.task);
    if let Some(r) = args.requirements {
        request = request.with_requirements(r);
    }
    if let Some(d) = args.data_description {
        request = request.with_data_description(d);
    }
    let gateway = source.build(&config)?;
    let registry = build_registry(&config)?;
    let run_dir = args.out.unwrap_or_else(|| new_run_dir(&config));
    let record = run_pipeline(&request, &config, gateway, &registry, &run_dir, &mut Progress)?;
    println!("status: {}", record.status.as_str());
    if let Some(e) = &record.error {
        println!("error: {e}");
    }
    println!("report: {}", run_dir.join(REPORT_FILE).display());
    Ok(match record.status {
        RunStatus::Completed => 0,
        RunStatus::Partial => EXIT_PARTIAL,
        RunStatus::Failed | RunStatus::Running => EXIT_FAILED,
    })
}

fn cmd_replay(run_dir: &Path, strict: bool) -> anyhow::Result<u8> {
    match replay_run(run_dir, strict, None) {
        Ok(report) if report.matches() => {
            println!("replay matches ({})", report.reproduced.status.as_str());
            Ok(0)
        }
        Ok(report) => {
            println!("replay diverged at {}", report.differences[0]);
            for d in &report.differences[1..] {
                println!("  also {d}");
            }
            Ok(EXIT_DIVERGED)
        }
        Err(PipelineError::Gateway(e @ (GatewayError::ReplayMismatch { .. } | GatewayError::ReplayExhausted(_)))) => {
            println!("replay diverged: {e}");
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_report(run_dir: &Path) -> anyhow::Result<u8> {
    let path = rewrite_report(run_dir)?;
    println!("{}", path.display());
    Ok(0)
}

fn cmd_score(kind: ScoreCommand) -> anyhow::Result<u8> {
    let (result, out) = match kind {
        ScoreCommand::Annotation { pairs, out } => (score_annotation_file(&pairs), out),
        ScoreCommand::Batch(a) => {
            let files = BatchFiles {
                values: a.values,
                embedding: a.embedding,
                embedding_before: a.embedding_before,
                batches: a.batches,
                cell_types: a.cell_types,
                clusters: a.clusters,
                k: a.k,
            };
            if !(0.0..=1.0).contains(&a.w_batch) {
                eprintln!("error: --w-batch must lie in [0, 1]");
                return Ok(EXIT_USAGE);
            }
            let weights = BatchWeights { batch: a.w_batch, bio: 1.0 - a.w_batch };
            (score_batch_files(&files, weights), a.out)
        }
        ScoreCommand::Trajectory(a) => {
            let files = TrajectoryFiles {
                reference_network: a.ref_network,
                reference_positions: a.ref_positions,
                predicted_network: a.pred_network,
                predicted_positions: a.pred_positions,
                reference_importance: a.ref_importance,
                predicted_importance: a.pred_importance,
                expression: a.expression,
                reference_root: a.root,
            };
            let options = CorDistOptions { seed: a.seed, ..CorDistOptions::default() };
            (score_trajectory_files(&files, options), a.out)
        }
    };
    match result {
        Ok(report) => {
            print!("{}", report.to_table());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(0)
        }
        Err(e @ (ScoreError::File(_) | ScoreError::Metric(_))) => {
            eprintln!("error: {e}");
            Ok(EXIT_DATA)
        }
    }
}
