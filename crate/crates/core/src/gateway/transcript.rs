use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, GatewayError, RoleKind};
use crate::memory::RoleTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// A message as stored in transcripts: images are reduced to digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedMessage {
    pub role: RoleTag,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_digests: Vec<String>,
}

impl From<&ChatMessage> for RecordedMessage {
    fn from(m: &ChatMessage) -> Self {
        Self {
            role: m.role,
            content: m.content.clone(),
            image_digests: m.images.iter().map(|i| i.digest()).collect(),
        }
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default)]
    pub fingerprint: String,
    pub role: RoleKind,
    pub subtask: u32,
    #[serde(default)]
    pub attempt: u32,
    #[serde(default)]
    pub request_digest: String,
    pub reply: String,
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub usage: Option<Usage>,
    #[serde(default)]
    pub messages: Vec<RecordedMessage>,
}

/// Reads a line-delimited transcript; blank lines and `//` comments are skipped.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, GatewayError> {
    let file = std::fs::File::open(path)?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let entry = serde_json::from_str(trimmed)
            .map_err(|e| GatewayError::Transcript { line: i + 1, message: e.to_string() })?;
        entries.push(entry);
    }
    Ok(entries)
}
