//! Global memory (final code per completed step) and local memory (the
//! current step's dialogue).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("subtask {0} already has a final cell")]
    Duplicate(u32),
    #[error("final cell for subtask {got} appended out of order; expected {expected}")]
    OutOfOrder { expected: u32, got: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalCell {
    pub subtask_id: u32,
    pub title: String,
    pub code: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalMemory {
    pub final_cells: Vec<FinalCell>,
}

impl GlobalMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.final_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.final_cells.is_empty()
    }

    /// Appends the chosen code of a finished subtask. Ids must be contiguous
    /// starting at 1.
    pub fn append_final_cell(
        &mut self,
        subtask_id: u32,
        title: impl Into<String>,
        code: impl Into<String>,
    ) -> Result<(), MemoryError> {
        if self.final_cells.iter().any(|c| c.subtask_id == subtask_id) {
            return Err(MemoryError::Duplicate(subtask_id));
        }
        let expected = self.final_cells.last().map_or(1, |c| c.subtask_id + 1);
        if subtask_id != expected {
            return Err(MemoryError::OutOfOrder { expected, got: subtask_id });
        }
        self.final_cells.push(FinalCell { subtask_id, title: title.into(), code: code.into() });
        Ok(())
    }

    /// Prompt fragment with each final cell under its step title.
    pub fn render_context(&self) -> String {
        let mut out = String::new();
        for cell in &self.final_cells {
            let _ = writeln!(out, "# Step {}: {}", cell.subtask_id, cell.title);
            out.push_str(cell.code.trim_end());
            out.push_str("\n\n");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub subtask_id: u32,
    pub role: RoleTag,
    pub content: String,
}

/// Dialogue of a single subtask. Created empty when the subtask starts and
/// dropped when it ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalMemory {
    subtask_id: u32,
    entries: Vec<LocalEntry>,
}

impl LocalMemory {
    pub fn new(subtask_id: u32) -> Self {
        Self { subtask_id, entries: Vec::new() }
    }

    pub fn subtask_id(&self) -> u32 {
        self.subtask_id
    }

    pub fn push(&mut self, role: RoleTag, content: impl Into<String>) {
        self.entries.push(LocalEntry { subtask_id: self.subtask_id, role, content: content.into() });
    }

    pub fn entries(&self) -> &[LocalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
