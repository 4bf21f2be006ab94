//! Supervises an out-of-process (or shimmed) kernel session: runs cells,
//! captures streams, exceptions and artifacts, enforces timeouts, and
//! exports the committed cells as a notebook.

mod notebook;
mod process;
pub mod protocol;
pub mod shim;

pub use notebook::notebook_json;
pub use process::ProcessKernel;
pub use shim::{serve, serve_stdio, ShimKernel, ShimWorker};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SandboxConfig;
use crate::gateway::sha256_hex;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("cannot start kernel worker: {0}")]
    Start(String),
    #[error("kernel protocol violation: {0}")]
    Protocol(String),
    #[error("replay of committed cell {cell_id} failed: {detail}")]
    Replay { cell_id: String, detail: String },
    #[error("session is not usable (state {0:?})")]
    NotIdle(SessionState),
    #[error("sandbox I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionInfo {
    pub name: String,
    pub message: String,
    pub traceback: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    Exception,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: OutcomeStatus,
    pub stdout: String,
    pub stderr: String,
    pub exception: Option<ExceptionInfo>,
    /// Workdir-relative paths of files created or changed by the cell.
    pub artifacts: Vec<String>,
    pub duration_secs: f64,
}

impl ExecutionOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == OutcomeStatus::Ok
    }
}

/// What a kernel reports for one cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    Ok,
    Error(ExceptionInfo),
    Timeout,
    /// The worker died mid-cell.
    Crashed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawOutcome {
    pub result: CellResult,
    pub stdout: String,
    pub stderr: String,
}

/// A worker connection. After `Timeout` or `Crashed` the kernel is unusable
/// until `restart`.
pub trait Kernel: Send {
    fn execute(&mut self, cell_id: &str, code: &str, timeout: Duration) -> Result<RawOutcome, SandboxError>;
    /// Replaces the worker with a fresh one (empty namespace).
    fn restart(&mut self) -> Result<(), SandboxError>;
    fn shutdown(&mut self);
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerSpec {
    /// In-process shim kernel.
    Shim,
    /// Program and arguments; `--artifacts DIR` is appended.
    Command(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub worker: WorkerSpec,
    pub cell_timeout: Duration,
    pub startup_timeout: Duration,
    pub grace: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self::from(&SandboxConfig::default())
    }
}

impl From<&SandboxConfig> for SessionOptions {
    fn from(c: &SandboxConfig) -> Self {
        Self {
            worker: c.worker.clone().map_or(WorkerSpec::Shim, WorkerSpec::Command),
            cell_timeout: Duration::from_secs_f64(c.cell_timeout_secs),
            startup_timeout: Duration::from_secs_f64(c.startup_timeout_secs),
            grace: Duration::from_secs_f64(c.grace_secs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Starting,
    Idle,
    Busy,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedCell {
    pub cell_id: String,
    pub code: String,
    pub outcome: ExecutionOutcome,
}

pub struct Session {
    id: String,
    state: SessionState,
    workdir: PathBuf,
    artifact_dir: PathBuf,
    kernel: Box<dyn Kernel>,
    opts: SessionOptions,
    bootstrap: ExecutedCell,
    executed: Vec<ExecutedCell>,
    committed: Vec<ExecutedCell>,
    /// Ok cells since the last reset; replayed after a timeout restart.
    live: Vec<(String, String)>,
    next_cell: u64,
    replayed_cells: usize,
    replaying: bool,
}

pub const ARTIFACT_DIR: &str = "artifacts";

/// The cell that loads the dataset into `adata`.
pub fn bootstrap_code(data_path: &Path) -> String {
    let literal = serde_json::to_string(&data_path.display().to_string()).expect("path serializes");
    format!("adata = read_dataset({literal})\nprint(adata)")
}

/// Launches the worker and runs the bootstrap cell. A bootstrap exception is
/// not an error here: inspect [`Session::bootstrap`].
pub fn start_session(workdir: &Path, data_path: &Path, opts: SessionOptions) -> Result<Session, SandboxError> {
    std::fs::create_dir_all(workdir)?;
    let workdir = workdir.canonicalize()?;
    let artifact_dir = workdir.join(ARTIFACT_DIR);
    std::fs::create_dir_all(&artifact_dir)?;
    let data_path = std::path::absolute(data_path)?;
    let kernel: Box<dyn Kernel> = match &opts.worker {
        WorkerSpec::Shim => {
            let mut k = ShimKernel::new(&artifact_dir);
            k.handshake()?;
            Box::new(k)
        }
        WorkerSpec::Command(cmd) => {
            Box::new(ProcessKernel::launch(cmd, &workdir, &artifact_dir, opts.startup_timeout, opts.grace)?)
        }
    };
    let id = format!("session-{}", &sha256_hex(format!("{}|{}", workdir.display(), data_path.display()).as_bytes())[..12]);
    let placeholder = ExecutionOutcome {
        status: OutcomeStatus::Ok,
        stdout: String::new(),
        stderr: String::new(),
        exception: None,
        artifacts: Vec::new(),
        duration_secs: 0.0,
    };
    let mut s = Session {
        id,
        state: SessionState::Starting,
        workdir,
        artifact_dir,
        kernel,
        opts,
        bootstrap: ExecutedCell { cell_id: "bootstrap".into(), code: bootstrap_code(&data_path), outcome: placeholder },
        executed: Vec::new(),
        committed: Vec::new(),
        live: Vec::new(),
        next_cell: 1,
        replayed_cells: 0,
        replaying: false,
    };
    let code = s.bootstrap.code.clone();
    s.state = SessionState::Idle;
    let outcome = s.run("bootstrap", &code)?;
    s.bootstrap.outcome = outcome.clone();
    s.executed.push(ExecutedCell { cell_id: "bootstrap".into(), code, outcome });
    s.live.clear();
    Ok(s)
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn artifact_dir(&self) -> &Path {
        &self.artifact_dir
    }

    pub fn bootstrap(&self) -> &ExecutedCell {
        &self.bootstrap
    }

    /// Every cell submitted through [`Session::execute`], plus the bootstrap.
    pub fn executed_cells(&self) -> &[ExecutedCell] {
        &self.executed
    }

    pub fn committed_cells(&self) -> &[ExecutedCell] {
        &self.committed
    }

    /// Cells re-executed by resets and restarts so far.
    pub fn replayed_cells(&self) -> usize {
        self.replayed_cells
    }

    pub fn kernel_name(&self) -> String {
        self.kernel.describe()
    }

    pub fn execute(&mut self, code: &str) -> Result<ExecutionOutcome, SandboxError> {
        let cell_id = format!("cell-{}", self.next_cell);
        self.next_cell += 1;
        let outcome = self.run(&cell_id, code)?;
        if outcome.is_ok() {
            self.live.push((cell_id.clone(), code.to_string()));
        }
        self.executed.push(ExecutedCell { cell_id, code: code.to_string(), outcome: outcome.clone() });
        Ok(outcome)
    }

    fn run(&mut self, cell_id: &str, code: &str) -> Result<ExecutionOutcome, SandboxError> {
        if self.state != SessionState::Idle {
            return Err(SandboxError::NotIdle(self.state));
        }
        self.state = SessionState::Busy;
        let before = snapshot(&self.artifact_dir)?;
        let started = Instant::now();
        let raw = match self.kernel.execute(cell_id, code, self.opts.cell_timeout) {
            Ok(raw) => raw,
            Err(e) => {
                self.state = SessionState::Dead;
                return Err(e);
            }
        };
        let duration_secs = started.elapsed().as_secs_f64();
        let (status, exception) = match raw.result {
            CellResult::Ok => (OutcomeStatus::Ok, None),
            CellResult::Error(e) => (OutcomeStatus::Exception, Some(e)),
            CellResult::Timeout => (OutcomeStatus::Timeout, None),
            CellResult::Crashed(detail) => (
                OutcomeStatus::Exception,
                Some(ExceptionInfo {
                    name: "WorkerCrash".into(),
                    message: detail.clone(),
                    traceback: vec![format!("WorkerCrash: {detail}")],
                }),
            ),
        };
        let needs_restart = matches!(status, OutcomeStatus::Timeout)
            || exception.as_ref().is_some_and(|e| e.name == "WorkerCrash");
        let after = snapshot(&self.artifact_dir)?;
        let prefix = self.artifact_dir.strip_prefix(&self.workdir).unwrap_or(Path::new(ARTIFACT_DIR)).to_path_buf();
        let artifacts = after
            .iter()
            .filter(|(p, h)| before.get(*p) != Some(*h))
            .map(|(p, _)| prefix.join(p).to_string_lossy().replace('\\', "/"))
            .collect();
        self.state = SessionState::Idle;
        if needs_restart && !self.replaying {
            self.restart_and_replay(false)?;
        }
        Ok(ExecutionOutcome { status, stdout: raw.stdout, stderr: raw.stderr, exception, artifacts, duration_secs })
    }

    /// Fresh worker, then bootstrap + committed cells (+ live ok cells when
    /// recovering from a timeout).
    fn restart_and_replay(&mut self, clean: bool) -> Result<(), SandboxError> {
        self.state = SessionState::Starting;
        if let Err(e) = self.kernel.restart() {
            self.state = SessionState::Dead;
            return Err(e);
        }
        if clean {
            std::fs::remove_dir_all(&self.artifact_dir)?;
            std::fs::create_dir_all(&self.artifact_dir)?;
            self.live.clear();
        }
        self.state = SessionState::Idle;
        let mut cells: Vec<(String, String)> = vec![(self.bootstrap.cell_id.clone(), self.bootstrap.code.clone())];
        cells.extend(self.committed.iter().map(|c| (c.cell_id.clone(), c.code.clone())));
        let n_committed = cells.len();
        cells.extend(self.live.iter().cloned());
        let bootstrap_ok = self.bootstrap.outcome.is_ok();
        for (i, (cell_id, code)) in cells.into_iter().enumerate() {
            self.replaying = true;
            let outcome = self.run(&cell_id, &code);
            self.replaying = false;
            let outcome = outcome?;
            self.replayed_cells += 1;
            if !outcome.is_ok() && !(i == 0 && !bootstrap_ok) {
                self.state = SessionState::Dead;
                let detail = outcome.exception.as_ref().map_or_else(
                    || format!("{:?}", outcome.status),
                    |e| format!("{}: {}", e.name, e.message),
                );
                return Err(SandboxError::Replay { cell_id, detail });
            }
            if clean {
                if i == 0 {
                    self.bootstrap.outcome = outcome;
                } else if i < n_committed {
                    self.committed[i - 1].outcome = outcome;
                }
            }
        }
        Ok(())
    }

    /// Discards trial state: a fresh worker holding exactly the bootstrap and
    /// the committed cells, re-executed in order. The artifact directory is
    /// cleared first, so committed cells regenerate their files.
    pub fn reset_to_committed(&mut self) -> Result<(), SandboxError> {
        self.restart_and_replay(true)
    }

    /// Appends `code` to the committed cells and resets, so the committed
    /// state is rebuilt by re-execution.
    pub fn commit(&mut self, code: &str) -> Result<(), SandboxError> {
        let cell_id = format!("commit-{}", self.committed.len() + 1);
        let placeholder = ExecutionOutcome {
            status: OutcomeStatus::Ok,
            stdout: String::new(),
            stderr: String::new(),
            exception: None,
            artifacts: Vec::new(),
            duration_secs: 0.0,
        };
        self.committed.push(ExecutedCell { cell_id, code: code.to_string(), outcome: placeholder });
        self.reset_to_committed()
    }

    /// Writes the bootstrap and committed cells as nbformat 4.5 JSON.
    pub fn export_notebook(&self, path: &Path) -> Result<PathBuf, SandboxError> {
        let mut cells = vec![&self.bootstrap];
        cells.extend(&self.committed);
        let doc = notebook_json(&cells, &self.kernel.describe());
        let text = serde_json::to_string_pretty(&doc).expect("notebook serializes");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, text + "\n")?;
        Ok(path.to_path_buf())
    }

    pub fn shutdown(&mut self) {
        if self.state != SessionState::Dead {
            self.kernel.shutdown();
            self.state = SessionState::Dead;
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Relative path → content hash for every file under `dir`.
fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, String>, SandboxError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = match std::fs::read_dir(&d) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("walk stays under dir").to_path_buf();
                out.insert(rel, sha256_hex(&std::fs::read(&path)?));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(dir: &Path) -> PathBuf {
        let p = dir.join("toy.csv");
        std::fs::write(&p, "cell,g1,g2\nc1,1,0\nc2,0,2\nc3,3,1\n").unwrap();
        std::fs::write(dir.join("obs.csv"), "cell,batch,cell_type\nc1,a,T\nc2,b,B\nc3,a,T\n").unwrap();
        p
    }

    fn shim_session(dir: &Path) -> Session {
        let data = dataset(dir);
        let opts = SessionOptions { cell_timeout: Duration::from_secs(5), ..Default::default() };
        start_session(&dir.join("work"), &data, opts).unwrap()
    }

    #[test]
    fn bootstrap_loads_the_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let s = shim_session(dir.path());
        assert_eq!(s.state(), SessionState::Idle);
        assert!(s.bootstrap().outcome.is_ok());
        assert!(s.bootstrap().outcome.stdout.contains("3 × 2"), "{}", s.bootstrap().outcome.stdout);
        assert_eq!(s.executed_cells().len(), 1);
    }

    #[test]
    fn corrupt_dataset_surfaces_as_exception() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "cell,g1\nc1,notanumber\n").unwrap();
        let s = start_session(&dir.path().join("w"), &p, SessionOptions::default()).unwrap();
        let o = &s.bootstrap().outcome;
        assert_eq!(o.status, OutcomeStatus::Exception);
        assert_eq!(o.exception.as_ref().unwrap().name, "ValueError");
        assert!(!o.exception.as_ref().unwrap().traceback.is_empty());
    }

    #[test]
    fn state_persists_and_artifacts_are_attributed() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        assert!(s.execute("x = 21").unwrap().is_ok());
        let o = s.execute("print(x*2)").unwrap();
        assert_eq!(o.stdout, "42\n");
        let o = s.execute("savefig('umap.png')").unwrap();
        assert_eq!(o.artifacts, ["artifacts/umap.png"]);
        assert!(s.workdir().join("artifacts/umap.png").exists());
        let o = s.execute("print(1)").unwrap();
        assert!(o.artifacts.is_empty());
    }

    #[test]
    fn name_error_outcome() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        let o = s.execute("print(sc)").unwrap();
        assert_eq!(o.status, OutcomeStatus::Exception);
        let e = o.exception.unwrap();
        assert_eq!(e.name, "NameError");
        assert!(!e.traceback.is_empty());
    }

    #[test]
    fn reset_discards_trial_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        s.commit("base = 1").unwrap();
        s.execute("y = 2").unwrap();
        s.reset_to_committed().unwrap();
        assert_eq!(s.execute("print(y)").unwrap().exception.unwrap().name, "NameError");
        assert!(s.execute("print(base)").unwrap().is_ok());
        assert!(s.execute("print(adata.n_obs)").unwrap().stdout == "3\n");
    }

    #[test]
    fn reset_with_nothing_committed_keeps_bootstrap() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        s.execute("z = 5").unwrap();
        s.reset_to_committed().unwrap();
        assert!(s.execute("print(adata)").unwrap().is_ok());
        assert!(!s.execute("print(z)").unwrap().is_ok());
    }

    #[test]
    fn failing_committed_cell_is_a_replay_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        assert!(matches!(s.commit("undefined_name"), Err(SandboxError::Replay { .. })));
    }

    #[test]
    fn virtual_timeout_restarts_and_keeps_prior_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        s.execute("kept = 7").unwrap();
        let o = s.execute("sleep(100)").unwrap();
        assert_eq!(o.status, OutcomeStatus::Timeout);
        assert!(o.exception.is_none());
        assert_eq!(s.execute("print(kept)").unwrap().stdout, "7\n");
    }

    #[test]
    fn notebook_export_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = shim_session(dir.path());
        s.commit("print('one')").unwrap();
        s.commit("x = 2").unwrap();
        let a = std::fs::read(s.export_notebook(&dir.path().join("a.nb.json")).unwrap()).unwrap();
        let b = std::fs::read(s.export_notebook(&dir.path().join("b.nb.json")).unwrap()).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
        assert_eq!(v["cells"].as_array().unwrap().len(), 3);
        assert_eq!(v["cells"][1]["outputs"][0]["text"][0], "one\n");
    }
}
