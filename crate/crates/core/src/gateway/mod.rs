//! Uniform chat interface over live, scripted and replayed backends.
//!
//! Every call goes through [`Gateway`], which fingerprints the request,
//! forwards it to the configured [`ChatBackend`] and appends a
//! [`TranscriptEntry`]. Transcripts are line-delimited JSON and double as
//! fixtures for the scripted backend.

mod http;
mod replay;
mod scripted;
mod transcript;

pub use http::{HttpBackend, HttpSettings, HttpTransport, UreqTransport};
pub use replay::ReplayBackend;
pub use scripted::ScriptedBackend;
pub use transcript::{read_transcript, RecordedMessage, TranscriptEntry, Usage};

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::RoleTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Planner,
    ToolSelector,
    Programmer,
    Evaluator,
}

impl RoleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Planner => "planner",
            Self::ToolSelector => "tool_selector",
            Self::Programmer => "programmer",
            Self::Evaluator => "evaluator",
        }
    }
}

impl fmt::Display for RoleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies a call for scripted replies: the role, the subtask id (0 for
/// the planner) and the repair attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallKey {
    pub role: RoleKind,
    pub subtask: u32,
    pub attempt: u32,
}

impl CallKey {
    pub fn new(role: RoleKind, subtask: u32, attempt: u32) -> Self {
        Self { role, subtask, attempt }
    }
}

impl fmt::Display for CallKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/subtask {}/attempt {}", self.role, self.subtask, self.attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_type: String,
    pub data_base64: String,
}

impl ImagePayload {
    pub fn from_bytes(media_type: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            media_type: media_type.into(),
            data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    /// SHA-256 of the encoded payload; transcripts store this instead of the bytes.
    pub fn digest(&self) -> String {
        sha256_hex(self.data_base64.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: RoleTag,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImagePayload>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: RoleTag::System, content: content.into(), images: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: RoleTag::User, content: content.into(), images: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: RoleTag::Assistant, content: content.into(), images: Vec::new() }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("no scripted reply left for {0}")]
    ReplayExhausted(CallKey),
    #[error("replay diverged at call {index} ({key}): {detail} [recorded fingerprint {expected}, got {actual}]")]
    ReplayMismatch { index: usize, key: CallKey, expected: String, actual: String, detail: String },
    #[error("a message must carry text or images")]
    EmptyMessage,
    #[error("image judging needs at least one image")]
    NoImages,
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

/// A fully prepared call as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub key: CallKey,
    pub messages: &'a [ChatMessage],
    /// Route to the image-capable model.
    pub vision: bool,
    pub fingerprint: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, GatewayError>;

    /// Whether calls reach the network.
    fn is_live(&self) -> bool {
        false
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the messages exactly as they would be sent (images by digest).
pub fn request_digest(messages: &[ChatMessage]) -> String {
    let recorded: Vec<RecordedMessage> = messages.iter().map(RecordedMessage::from).collect();
    sha256_hex(serde_json::to_string(&recorded).expect("messages serialize").as_bytes())
}

/// Stable hash of `(role, subtask, attempt, request digest)`.
pub fn fingerprint(key: CallKey, request_digest: &str) -> String {
    sha256_hex(format!("{}|{}|{}|{}", key.role, key.subtask, key.attempt, request_digest).as_bytes())
}

struct TranscriptState {
    entries: Vec<TranscriptEntry>,
    sink: Option<BufWriter<File>>,
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    state: Mutex<TranscriptState>,
    live_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            state: Mutex::new(TranscriptState { entries: Vec::new(), sink: None }),
            live_calls: AtomicUsize::new(0),
        }
    }

    /// Persists every subsequent transcript entry to `path` (truncating it).
    pub fn record_to(self, path: &Path) -> Result<Self, GatewayError> {
        let file = File::create(path)?;
        self.state.lock().expect("transcript lock").sink = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn complete(&self, key: CallKey, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        self.call(key, messages, false)
    }

    /// Sends `instruction` with the images attached and returns the verdict
    /// text unparsed.
    pub fn judge_images(
        &self,
        key: CallKey,
        system: &str,
        instruction: &str,
        images: &[ImagePayload],
    ) -> Result<String, GatewayError> {
        if images.is_empty() {
            return Err(GatewayError::NoImages);
        }
        let messages = [
            ChatMessage::system(system),
            ChatMessage { role: RoleTag::User, content: instruction.to_string(), images: images.to_vec() },
        ];
        self.call(key, &messages, true)
    }

    fn call(&self, key: CallKey, messages: &[ChatMessage], vision: bool) -> Result<String, GatewayError> {
        if messages.iter().any(|m| m.content.is_empty() && m.images.is_empty()) {
            return Err(GatewayError::EmptyMessage);
        }
        let digest = request_digest(messages);
        let fp = fingerprint(key, &digest);
        let started = Instant::now();
        if self.backend.is_live() {
            self.live_calls.fetch_add(1, Ordering::SeqCst);
        }
        let reply = self.backend.complete(&BackendRequest { key, messages, vision, fingerprint: &fp })?;
        let entry = TranscriptEntry {
            fingerprint: fp,
            role: key.role,
            subtask: key.subtask,
            attempt: key.attempt,
            request_digest: digest,
            reply: reply.text.clone(),
            backend: self.backend.id().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            usage: reply.usage,
            messages: messages.iter().map(RecordedMessage::from).collect(),
        };
        let mut state = self.state.lock().expect("transcript lock");
        if let Some(sink) = state.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &entry).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        state.entries.push(entry);
        Ok(reply.text)
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.state.lock().expect("transcript lock").entries.clone()
    }

    /// Number of calls that went to a network backend.
    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_stable_and_input_sensitive() {
        let msgs = [ChatMessage::system("sys"), ChatMessage::user("hi")];
        let key = CallKey::new(RoleKind::Planner, 0, 0);
        let a = fingerprint(key, &request_digest(&msgs));
        assert_eq!(a, fingerprint(key, &request_digest(&msgs)));
        let edited = [ChatMessage::system("sys"), ChatMessage::user("hi!")];
        assert_ne!(a, fingerprint(key, &request_digest(&edited)));
        assert_ne!(a, fingerprint(CallKey::new(RoleKind::Planner, 0, 1), &request_digest(&msgs)));
    }

    #[test]
    fn judge_requires_images() {
        let gw = Gateway::new(Box::new(ScriptedBackend::new()));
        let key = CallKey::new(RoleKind::Evaluator, 2, 0);
        assert!(matches!(gw.judge_images(key, "s", "rank", &[]), Err(GatewayError::NoImages)));
    }

    #[test]
    fn judge_records_image_digests_not_bytes() {
        let key = CallKey::new(RoleKind::Evaluator, 2, 0);
        let backend = ScriptedBackend::new().with_reply(key, "{\"ranking\":[2,1,3]}");
        let gw = Gateway::new(Box::new(backend));
        let images: Vec<ImagePayload> =
            (0..3).map(|i| ImagePayload::from_bytes("image/png", &[i as u8; 4096])).collect();
        let verdict = gw.judge_images(key, "judge", "rank these", &images).unwrap();
        assert_eq!(verdict, "{\"ranking\":[2,1,3]}");
        let t = gw.transcript();
        assert_eq!(t.len(), 1);
        let line = serde_json::to_string(&t[0]).unwrap();
        assert!(!line.contains(&images[0].data_base64));
        assert!(line.contains(&images[0].digest()));
    }
}
