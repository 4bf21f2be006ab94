use std::path::Path;
use std::sync::Mutex;

use super::{read_transcript, BackendReply, BackendRequest, CallKey, ChatBackend, GatewayError, TranscriptEntry};

/// Serves a recorded transcript in order.
///
/// The call sequence (role, subtask, attempt) must always match the
/// recording. With `strict`, request fingerprints must match as well, so any
/// prompt change is reported.
pub struct ReplayBackend {
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
    strict: bool,
}

impl ReplayBackend {
    pub fn new(entries: Vec<TranscriptEntry>, strict: bool) -> Self {
        Self { entries, cursor: Mutex::new(0), strict }
    }

    pub fn from_file(path: &Path, strict: bool) -> Result<Self, GatewayError> {
        Ok(Self::new(read_transcript(path)?, strict))
    }

    /// Entries not yet served.
    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().expect("cursor lock")
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, GatewayError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = *cursor;
        let Some(entry) = self.entries.get(index) else {
            return Err(GatewayError::ReplayExhausted(request.key));
        };
        let recorded = CallKey::new(entry.role, entry.subtask, entry.attempt);
        if recorded != request.key {
            return Err(GatewayError::ReplayMismatch {
                index,
                key: request.key,
                expected: entry.fingerprint.clone(),
                actual: request.fingerprint.to_string(),
                detail: format!("recorded call was {recorded}"),
            });
        }
        if self.strict && entry.fingerprint != request.fingerprint {
            return Err(GatewayError::ReplayMismatch {
                index,
                key: request.key,
                expected: entry.fingerprint.clone(),
                actual: request.fingerprint.to_string(),
                detail: "request content differs from the recording".into(),
            });
        }
        *cursor += 1;
        Ok(BackendReply { text: entry.reply.clone(), usage: entry.usage })
    }
}
