use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{encode, Request, Response, ResultStatus, StreamName, PROTOCOL_VERSION};
use super::{CellResult, ExceptionInfo, Kernel, RawOutcome, SandboxError};

enum Incoming {
    Message(Response),
    Garbage(String),
    Eof,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<Incoming>,
    worker: String,
}

/// A worker process speaking the line protocol on stdin/stdout. A reader
/// thread feeds a channel so the supervisor can wait with a deadline.
pub struct ProcessKernel {
    command: Vec<String>,
    workdir: PathBuf,
    artifact_dir: PathBuf,
    startup: Duration,
    grace: Duration,
    running: Option<Running>,
}

impl ProcessKernel {
    pub fn launch(
        command: &[String],
        workdir: &Path,
        artifact_dir: &Path,
        startup: Duration,
        grace: Duration,
    ) -> Result<Self, SandboxError> {
        if command.is_empty() {
            return Err(SandboxError::Start("empty worker command".into()));
        }
        let mut k = Self {
            command: command.to_vec(),
            workdir: workdir.to_path_buf(),
            artifact_dir: artifact_dir.to_path_buf(),
            startup,
            grace,
            running: None,
        };
        k.spawn()?;
        Ok(k)
    }

    fn spawn(&mut self) -> Result<(), SandboxError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg("--artifacts")
            .arg(&self.artifact_dir)
            .current_dir(&self.workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::Start(format!("{}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let msg = match line {
                    Ok(l) if l.trim().is_empty() => continue,
                    Ok(l) => match serde_json::from_str(&l) {
                        Ok(m) => Incoming::Message(m),
                        Err(_) => Incoming::Garbage(l),
                    },
                    Err(e) => Incoming::Garbage(format!("unreadable output: {e}")),
                };
                if tx.send(msg).is_err() {
                    return;
                }
            }
            let _ = tx.send(Incoming::Eof);
        });
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                tracing::debug!(target: "cellpilot::worker", "{line}");
            }
        });
        let mut running = Running { child, stdin, rx, worker: String::new() };
        let hello = send(&mut running.stdin, &Request::Handshake)
            .and_then(|()| match running.rx.recv_timeout(self.startup) {
                Ok(Incoming::Message(Response::Hello { worker, proto: PROTOCOL_VERSION })) => Ok(worker),
                Ok(Incoming::Message(Response::Hello { proto, .. })) => {
                    Err(format!("worker speaks protocol {proto}, expected {PROTOCOL_VERSION}"))
                }
                Ok(Incoming::Message(other)) => Err(format!("expected hello, got {}", encode(&other))),
                Ok(Incoming::Garbage(l)) => Err(format!("expected hello, got {l:?}")),
                Ok(Incoming::Eof) | Err(RecvTimeoutError::Disconnected) => Err("worker exited during handshake".into()),
                Err(RecvTimeoutError::Timeout) => Err(format!("no handshake within {:?}", self.startup)),
            });
        match hello {
            Ok(worker) => {
                running.worker = worker;
                self.running = Some(running);
                Ok(())
            }
            Err(e) => {
                let _ = running.child.kill();
                let _ = running.child.wait();
                Err(SandboxError::Start(e))
            }
        }
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

fn send(stdin: &mut ChildStdin, req: &Request) -> Result<(), String> {
    let mut line = encode(req);
    line.push('\n');
    stdin.write_all(line.as_bytes()).and_then(|()| stdin.flush()).map_err(|e| format!("write to worker: {e}"))
}

impl Kernel for ProcessKernel {
    fn execute(&mut self, cell_id: &str, code: &str, timeout: Duration) -> Result<RawOutcome, SandboxError> {
        let deadline = Instant::now() + timeout;
        let mut out = RawOutcome { result: CellResult::Timeout, stdout: String::new(), stderr: String::new() };
        let Some(r) = self.running.as_mut() else {
            return Ok(RawOutcome { result: CellResult::Crashed("worker is not running".into()), ..out });
        };
        let req = Request::Execute { cell_id: cell_id.to_string(), code: code.to_string() };
        if let Err(e) = send(&mut r.stdin, &req) {
            self.kill();
            out.result = CellResult::Crashed(e);
            return Ok(out);
        }
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            let r = self.running.as_mut().expect("running worker");
            match r.rx.recv_timeout(wait) {
                Ok(Incoming::Message(Response::Stream { cell_id: c, name, text })) if c == cell_id => match name {
                    StreamName::Stdout => out.stdout.push_str(&text),
                    StreamName::Stderr => out.stderr.push_str(&text),
                },
                Ok(Incoming::Message(Response::Result { cell_id: c, status, ename, evalue, traceback }))
                    if c == cell_id =>
                {
                    out.result = match status {
                        ResultStatus::Ok => CellResult::Ok,
                        ResultStatus::Error => CellResult::Error(ExceptionInfo {
                            name: ename.unwrap_or_else(|| "Exception".into()),
                            message: evalue.unwrap_or_default(),
                            traceback: traceback.unwrap_or_default(),
                        }),
                    };
                    return Ok(out);
                }
                Ok(Incoming::Message(other)) => {
                    self.kill();
                    return Err(SandboxError::Protocol(format!("unexpected message {}", encode(&other))));
                }
                Ok(Incoming::Garbage(l)) => {
                    self.kill();
                    return Err(SandboxError::Protocol(format!("unparseable line {l:?}")));
                }
                Ok(Incoming::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    let status = r.child.wait().map(|s| s.to_string()).unwrap_or_else(|e| e.to_string());
                    self.running = None;
                    out.result = CellResult::Crashed(format!("worker exited ({status})"));
                    return Ok(out);
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    out.result = CellResult::Timeout;
                    return Ok(out);
                }
            }
        }
    }

    fn restart(&mut self) -> Result<(), SandboxError> {
        self.shutdown();
        self.spawn()
    }

    fn shutdown(&mut self) {
        let Some(mut r) = self.running.take() else { return };
        if send(&mut r.stdin, &Request::Shutdown).is_ok() {
            let deadline = Instant::now() + self.grace;
            while Instant::now() < deadline {
                if matches!(r.child.try_wait(), Ok(Some(_))) {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
        }
        let _ = r.child.kill();
        let _ = r.child.wait();
    }

    fn describe(&self) -> String {
        self.running.as_ref().map_or_else(|| self.command[0].clone(), |r| r.worker.clone())
    }
}

impl Drop for ProcessKernel {
    fn drop(&mut self) {
        self.shutdown();
    }
}
