//! Prompt templates: plain text with `{slot}` placeholders; `{{` and `}}`
//! are literal braces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gateway::RoleKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{role} template: unbalanced brace at byte {at}")]
    Unbalanced { role: RoleKind, at: usize },
    #[error("{role} template: empty or invalid slot name at byte {at}")]
    BadSlot { role: RoleKind, at: usize },
    #[error("{role} template: slot {{{slot}}} was not filled")]
    MissingSlot { role: RoleKind, slot: String },
    #[error("cannot read prompt {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: RoleKind,
    pub system_text: String,
    pub expert_notes: Option<String>,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(role: RoleKind, system_text: impl Into<String>, expert_notes: Option<String>) -> Result<Self, TemplateError> {
        let system_text = system_text.into();
        let pieces = parse(role, &system_text)?;
        Ok(Self { role, system_text, expert_notes, pieces })
    }

    /// Slot names in order of first use.
    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.pieces {
            if let Piece::Slot(s) = p {
                if !out.contains(&s.as_str()) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Fills every slot. `expert_notes` is supplied from the template itself
    /// unless given explicitly. Extra values are ignored.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let notes = self.expert_notes.clone().unwrap_or_else(|| "(none)".into());
        let mut out = String::with_capacity(self.system_text.len() + 256);
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match values.get(s.as_str()) {
                    Some(v) => out.push_str(v),
                    None if s == "expert_notes" => out.push_str(notes.trim_end()),
                    None => return Err(TemplateError::MissingSlot { role: self.role, slot: s.clone() }),
                },
            }
        }
        Ok(out)
    }
}

fn parse(role: RoleKind, text: &str) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                buf.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                buf.push('}');
                i += 2;
            }
            b'{' => {
                let end = text[i + 1..].find('}').ok_or(TemplateError::Unbalanced { role, at: i })? + i + 1;
                let name = &text[i + 1..end];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(TemplateError::BadSlot { role, at: i });
                }
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Slot(name.to_string()));
                i = end + 1;
            }
            b'}' => return Err(TemplateError::Unbalanced { role, at: i }),
            _ => {
                let ch = text[i..].chars().next().expect("in bounds");
                buf.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

const ROLES: [RoleKind; 4] = [RoleKind::Planner, RoleKind::ToolSelector, RoleKind::Programmer, RoleKind::Evaluator];

fn default_text(role: RoleKind) -> (&'static str, &'static str) {
    match role {
        RoleKind::Planner => (include_str!("../../prompts/planner.txt"), include_str!("../../prompts/planner.notes.txt")),
        RoleKind::ToolSelector => (
            include_str!("../../prompts/tool_selector.txt"),
            include_str!("../../prompts/tool_selector.notes.txt"),
        ),
        RoleKind::Programmer => (
            include_str!("../../prompts/programmer.txt"),
            include_str!("../../prompts/programmer.notes.txt"),
        ),
        RoleKind::Evaluator => {
            (include_str!("../../prompts/evaluator.txt"), include_str!("../../prompts/evaluator.notes.txt"))
        }
    }
}

/// One template per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<RoleKind, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::defaults()
    }
}

impl PromptSet {
    pub fn defaults() -> Self {
        let templates = ROLES
            .into_iter()
            .map(|r| {
                let (text, notes) = default_text(r);
                (r, PromptTemplate::new(r, text, Some(notes.to_string())).expect("built-in template parses"))
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates, overridden by `<role>.txt` and `<role>.notes.txt`
    /// files found in `dir`.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut set = Self::defaults();
        let Some(dir) = dir else { return Ok(set) };
        for r in ROLES {
            let read = |name: String| -> Result<Option<String>, TemplateError> {
                let path = dir.join(name);
                match std::fs::read_to_string(&path) {
                    Ok(t) => Ok(Some(t)),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(TemplateError::Io { path, message: e.to_string() }),
                }
            };
            let text = read(format!("{}.txt", r.as_str()))?;
            let notes = read(format!("{}.notes.txt", r.as_str()))?;
            if text.is_none() && notes.is_none() {
                continue;
            }
            let current = &set.templates[&r];
            let t = PromptTemplate::new(
                r,
                text.unwrap_or_else(|| current.system_text.clone()),
                notes.or_else(|| current.expert_notes.clone()),
            )?;
            set.templates.insert(r, t);
        }
        Ok(set)
    }

    /// Writes the built-in templates and notes to `dir` for editing.
    pub fn write_defaults(dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for r in ROLES {
            let (text, notes) = default_text(r);
            std::fs::write(dir.join(format!("{}.txt", r.as_str())), text)?;
            std::fs::write(dir.join(format!("{}.notes.txt", r.as_str())), notes)?;
        }
        Ok(())
    }

    pub fn get(&self, role: RoleKind) -> &PromptTemplate {
        &self.templates[&role]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn renders_slots_and_escapes() {
        let t = PromptTemplate::new(RoleKind::Planner, "a {x} {{lit}} {y}{x}", None).unwrap();
        assert_eq!(t.slots(), ["x", "y"]);
        assert_eq!(t.render(&vals(&[("x", "1"), ("y", "2")])).unwrap(), "a 1 {lit} 21");
    }

    #[test]
    fn missing_slot_is_an_error() {
        let t = PromptTemplate::new(RoleKind::Planner, "{x} {y}", None).unwrap();
        assert_eq!(
            t.render(&vals(&[("x", "1")])),
            Err(TemplateError::MissingSlot { role: RoleKind::Planner, slot: "y".into() })
        );
    }

    #[test]
    fn notes_fill_their_slot() {
        let t = PromptTemplate::new(RoleKind::Evaluator, "n: {expert_notes}", Some("be careful\n".into())).unwrap();
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), "n: be careful");
    }

    #[test]
    fn malformed_templates_rejected() {
        assert!(PromptTemplate::new(RoleKind::Planner, "oops {", None).is_err());
        assert!(PromptTemplate::new(RoleKind::Planner, "oops }", None).is_err());
        assert!(PromptTemplate::new(RoleKind::Planner, "{bad slot}", None).is_err());
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("planner.txt"), "custom {task}").unwrap();
        std::fs::write(dir.path().join("evaluator.notes.txt"), "mine").unwrap();
        let set = PromptSet::load(Some(dir.path())).unwrap();
        assert_eq!(set.get(RoleKind::Planner).system_text, "custom {task}");
        assert_eq!(set.get(RoleKind::Evaluator).expert_notes.as_deref(), Some("mine"));
        assert_eq!(set.get(RoleKind::Programmer), PromptSet::defaults().get(RoleKind::Programmer));
        let out = tempfile::tempdir().unwrap();
        PromptSet::write_defaults(out.path()).unwrap();
        assert_eq!(PromptSet::load(Some(out.path())).unwrap(), PromptSet::defaults());
    }
}
