//! Desk-scale kernel worker: serves the line protocol on stdio.
//!
//! Usage: cellpilot-stub-worker --artifacts DIR

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let mut artifacts: Option<PathBuf> = None;
    while let Some(a) = args.next() {
        match a.as_str() {
            "--artifacts" => artifacts = args.next().map(PathBuf::from),
            other => {
                eprintln!("unknown argument {other:?}");
                return ExitCode::from(64);
            }
        }
    }
    let Some(dir) = artifacts else {
        eprintln!("usage: cellpilot-stub-worker --artifacts DIR");
        return ExitCode::from(64);
    };
    match cellpilot_core::sandbox::serve_stdio(&dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("worker failed: {e}");
            ExitCode::FAILURE
        }
    }
}
