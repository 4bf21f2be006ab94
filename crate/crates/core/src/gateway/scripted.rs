use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use super::{read_transcript, BackendReply, BackendRequest, CallKey, ChatBackend, GatewayError};

/// Deterministic backend serving queued replies per [`CallKey`].
///
/// Replies are matched by key only, never by prompt content, so template
/// edits do not invalidate fixtures.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<CallKey, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_reply(self, key: CallKey, reply: impl Into<String>) -> Self {
        self.push(key, reply);
        self
    }

    pub fn push(&self, key: CallKey, reply: impl Into<String>) {
        self.queues.lock().expect("queue lock").entry(key).or_default().push_back(reply.into());
    }

    /// Loads a fixture: a transcript-format file where only `role`,
    /// `subtask`, `attempt` and `reply` are required.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let backend = Self::new();
        for e in read_transcript(path)? {
            backend.push(CallKey::new(e.role, e.subtask, e.attempt), e.reply);
        }
        Ok(backend)
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().expect("queue lock").values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, GatewayError> {
        let mut queues = self.queues.lock().expect("queue lock");
        let text = queues
            .get_mut(&request.key)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::ReplayExhausted(request.key))?;
        Ok(BackendReply { text, usage: None })
    }
}
