//! Desk-scale worker: the protocol server around [`interp::Interpreter`],
//! usable both as a stdio process and as an in-process kernel.

pub mod interp;

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use interp::{CellRun, Clock, Interpreter, Interrupt};

use super::protocol::{encode, Request, Response, ResultStatus, StreamName, PROTOCOL_VERSION};
use super::{CellResult, ExceptionInfo, Kernel, RawOutcome, SandboxError};

pub const WORKER_NAME: &str = "cellpilot-shim";

/// Stream messages carry at most this many bytes of text.
pub const STREAM_CHUNK_BYTES: usize = 8 * 1024;

pub struct ShimWorker {
    interp: Interpreter,
    real_clock: bool,
    counter: u64,
    shut_down: bool,
    timed_out: bool,
}

impl ShimWorker {
    /// A worker whose `sleep` really sleeps.
    pub fn new(artifact_dir: impl Into<PathBuf>) -> Self {
        Self::with_clock(artifact_dir.into(), Clock::Real)
    }

    /// A worker on a virtual clock: cells whose total `sleep` exceeds the
    /// budget are abandoned without a result.
    pub fn with_virtual_clock(artifact_dir: impl Into<PathBuf>, budget: Duration) -> Self {
        Self::with_clock(artifact_dir.into(), Clock::Virtual { budget_secs: budget.as_secs_f64() })
    }

    fn with_clock(artifact_dir: PathBuf, clock: Clock) -> Self {
        Self {
            interp: Interpreter::new(&artifact_dir, clock),
            real_clock: matches!(clock, Clock::Real),
            counter: 0,
            shut_down: false,
            timed_out: false,
        }
    }

    pub fn set_budget(&mut self, budget: Duration) {
        if !self.real_clock {
            self.interp.set_clock(Clock::Virtual { budget_secs: budget.as_secs_f64() });
        }
    }

    pub fn is_shut_down(&self) -> bool {
        self.shut_down
    }

    /// Whether the last execute ran out of virtual time.
    pub fn timed_out(&self) -> bool {
        self.timed_out
    }

    /// Handles one request line and returns the response lines.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        self.timed_out = false;
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let cell_id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("cell_id").and_then(|c| c.as_str()).map(str::to_string))
                    .unwrap_or_default();
                let msg = format!("malformed request: {e}");
                return vec![encode(&Response::Result {
                    cell_id,
                    status: ResultStatus::Error,
                    ename: Some("ProtocolError".into()),
                    evalue: Some(msg.clone()),
                    traceback: Some(vec![format!("ProtocolError: {msg}")]),
                })];
            }
        };
        match req {
            Request::Handshake => {
                vec![encode(&Response::Hello { worker: WORKER_NAME.into(), proto: PROTOCOL_VERSION })]
            }
            Request::Shutdown => {
                self.shut_down = true;
                Vec::new()
            }
            Request::Execute { cell_id, code } => self.execute(cell_id, &code),
        }
    }

    fn execute(&mut self, cell_id: String, code: &str) -> Vec<String> {
        self.counter += 1;
        let CellRun { output, result } = self.interp.run_cell(code);
        let mut lines = Vec::new();
        for (name, text) in output {
            for chunk in chunks(&text, STREAM_CHUNK_BYTES) {
                lines.push(encode(&Response::Stream { cell_id: cell_id.clone(), name, text: chunk.to_string() }));
            }
        }
        let result = match result {
            Ok(()) => Response::Result {
                cell_id,
                status: ResultStatus::Ok,
                ename: None,
                evalue: None,
                traceback: None,
            },
            Err(Interrupt::Error(e)) => {
                let src = code.lines().nth(e.line.saturating_sub(1)).unwrap_or("").trim();
                let last = if e.message.is_empty() { e.name.clone() } else { format!("{}: {}", e.name, e.message) };
                Response::Result {
                    cell_id,
                    status: ResultStatus::Error,
                    ename: Some(e.name),
                    evalue: Some(e.message),
                    traceback: Some(vec![
                        "Traceback (most recent call last):".into(),
                        format!("  Cell In[{}], line {}", self.counter, e.line),
                        format!("    {src}"),
                        last,
                    ]),
                }
            }
            Err(Interrupt::Timeout) => {
                self.timed_out = true;
                return lines;
            }
        };
        lines.push(encode(&result));
        lines
    }
}

/// Splits at char boundaries into pieces of at most `max` bytes.
fn chunks(text: &str, max: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while rest.len() > max {
        let mut cut = max;
        while !rest.is_char_boundary(cut) {
            cut -= 1;
        }
        let (head, tail) = rest.split_at(cut);
        out.push(head);
        rest = tail;
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// Serves the wire protocol on the given streams until shutdown or EOF.
pub fn serve(artifact_dir: &Path, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    std::fs::create_dir_all(artifact_dir)?;
    let mut worker = ShimWorker::new(artifact_dir);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for out in worker.handle_line(&line) {
            output.write_all(out.as_bytes())?;
            output.write_all(b"\n")?;
        }
        output.flush()?;
        if worker.is_shut_down() {
            break;
        }
    }
    Ok(())
}

/// Serves the protocol on this process's stdin/stdout.
pub fn serve_stdio(artifact_dir: &Path) -> io::Result<()> {
    serve(artifact_dir, io::stdin().lock(), io::stdout().lock())
}

/// In-process kernel that still round-trips every message through the JSON
/// wire format. Uses a virtual clock, so timeouts cost no wall time.
pub struct ShimKernel {
    artifact_dir: PathBuf,
    worker: ShimWorker,
}

impl ShimKernel {
    pub fn new(artifact_dir: impl Into<PathBuf>) -> Self {
        let artifact_dir = artifact_dir.into();
        let worker = ShimWorker::with_virtual_clock(&artifact_dir, Duration::MAX);
        Self { artifact_dir, worker }
    }

    fn roundtrip(&mut self, req: &Request) -> Result<Vec<Response>, SandboxError> {
        self.worker
            .handle_line(&encode(req))
            .iter()
            .map(|l| serde_json::from_str(l).map_err(|e| SandboxError::Protocol(format!("{e}: {l}"))))
            .collect()
    }

    pub fn handshake(&mut self) -> Result<String, SandboxError> {
        match self.roundtrip(&Request::Handshake)?.as_slice() {
            [Response::Hello { worker, proto: PROTOCOL_VERSION }] => Ok(worker.clone()),
            other => Err(SandboxError::Start(format!("unexpected handshake reply {other:?}"))),
        }
    }
}

impl Kernel for ShimKernel {
    fn execute(&mut self, cell_id: &str, code: &str, timeout: Duration) -> Result<RawOutcome, SandboxError> {
        self.worker.set_budget(timeout);
        let responses =
            self.roundtrip(&Request::Execute { cell_id: cell_id.to_string(), code: code.to_string() })?;
        collect_responses(cell_id, responses, self.worker.timed_out())
    }

    fn restart(&mut self) -> Result<(), SandboxError> {
        self.worker = ShimWorker::with_virtual_clock(&self.artifact_dir, Duration::MAX);
        self.handshake().map(drop)
    }

    fn shutdown(&mut self) {
        let _ = self.roundtrip(&Request::Shutdown);
    }

    fn describe(&self) -> String {
        WORKER_NAME.to_string()
    }
}

fn collect_responses(cell_id: &str, responses: Vec<Response>, timed_out: bool) -> Result<RawOutcome, SandboxError> {
    let mut out = RawOutcome { result: CellResult::Timeout, stdout: String::new(), stderr: String::new() };
    let mut done = false;
    for r in responses {
        match r {
            _ if done => return Err(SandboxError::Protocol("message after result".into())),
            Response::Stream { cell_id: c, name, text } if c == cell_id => match name {
                StreamName::Stdout => out.stdout.push_str(&text),
                StreamName::Stderr => out.stderr.push_str(&text),
            },
            Response::Result { cell_id: c, status, ename, evalue, traceback } if c == cell_id => {
                out.result = match status {
                    ResultStatus::Ok => CellResult::Ok,
                    ResultStatus::Error => CellResult::Error(ExceptionInfo {
                        name: ename.unwrap_or_else(|| "Exception".into()),
                        message: evalue.unwrap_or_default(),
                        traceback: traceback.unwrap_or_default(),
                    }),
                };
                done = true;
            }
            other => return Err(SandboxError::Protocol(format!("unexpected message {}", encode(&other)))),
        }
    }
    if !done && !timed_out {
        return Err(SandboxError::Protocol("worker sent no result".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_and_execute_over_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ShimWorker::new(dir.path());
        assert_eq!(w.handle_line(r#"{"type":"handshake"}"#), [r#"{"type":"hello","worker":"cellpilot-shim","proto":1}"#]);
        let out = w.handle_line(r#"{"type":"execute","cell_id":"a","code":"print(\"hi\")"}"#);
        assert_eq!(
            out,
            [
                r#"{"type":"stream","cell_id":"a","name":"stdout","text":"hi\n"}"#,
                r#"{"type":"result","cell_id":"a","status":"ok"}"#
            ]
        );
        let out = w.handle_line(r#"{"type":"execute","cell_id":"b","code":"1/0"}"#);
        let r: Response = serde_json::from_str(&out[0]).unwrap();
        match r {
            Response::Result { status: ResultStatus::Error, ename, traceback, .. } => {
                assert!(ename.unwrap().contains("ZeroDivision"));
                let tb = traceback.unwrap();
                assert_eq!(tb[1], "  Cell In[2], line 1");
                assert_eq!(tb.last().unwrap(), "ZeroDivisionError: division by zero");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_request_is_a_protocol_error_result() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ShimWorker::new(dir.path());
        let out = w.handle_line("{not json");
        assert!(out[0].contains(r#""ename":"ProtocolError""#), "{}", out[0]);
    }

    #[test]
    fn chunks_respect_char_boundaries() {
        let text = "é".repeat(10);
        let parts = chunks(&text, 5);
        assert!(parts.iter().all(|p| p.len() <= 5));
        assert_eq!(parts.concat(), text);
    }

    #[test]
    fn serve_loop_stops_at_shutdown() {
        let dir = tempfile::tempdir().unwrap();
        let input = "{\"type\":\"handshake\"}\n\n{\"type\":\"execute\",\"cell_id\":\"c\",\"code\":\"x = 2\"}\n{\"type\":\"shutdown\"}\n{\"type\":\"handshake\"}\n";
        let mut out = Vec::new();
        serve(dir.path(), input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
    }
}
