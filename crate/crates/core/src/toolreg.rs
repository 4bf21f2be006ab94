//! Registry of analysis tools: descriptors plus documentation.
//!
//! Tools are never called in-process. The tool selector sees summaries and
//! the programmer sees docs; generated code uses the tools inside the
//! sandbox.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::SubtaskKind;

pub const DEFAULT_DOC_BUDGET: usize = 8 * 1024;

const BUILTIN: &[(&str, &str)] = &[
    ("qc_filter_like.md", include_str!("../tools/qc_filter_like.md")),
    ("normalize_like.md", include_str!("../tools/normalize_like.md")),
    ("hvg_like.md", include_str!("../tools/hvg_like.md")),
    ("leiden_like.md", include_str!("../tools/leiden_like.md")),
    ("scvi_like.md", include_str!("../tools/scvi_like.md")),
    ("harmony_like.md", include_str!("../tools/harmony_like.md")),
    ("combat_like.md", include_str!("../tools/combat_like.md")),
    ("scanorama_like.md", include_str!("../tools/scanorama_like.md")),
    ("liger_like.md", include_str!("../tools/liger_like.md")),
    ("cellmarker_like.md", include_str!("../tools/cellmarker_like.md")),
    ("act_like.md", include_str!("../tools/act_like.md")),
    ("celltypist_like.md", include_str!("../tools/celltypist_like.md")),
    ("scsa_like.md", include_str!("../tools/scsa_like.md")),
    ("sctype_like.md", include_str!("../tools/sctype_like.md")),
    ("llm_annotator_like.md", include_str!("../tools/llm_annotator_like.md")),
    ("slingshot_like.md", include_str!("../tools/slingshot_like.md")),
    ("paga_like.md", include_str!("../tools/paga_like.md")),
    ("paga_tree_like.md", include_str!("../tools/paga_tree_like.md")),
    ("scorpius_like.md", include_str!("../tools/scorpius_like.md")),
    ("raceid_stemid_like.md", include_str!("../tools/raceid_stemid_like.md")),
    ("umap_plot_like.md", include_str!("../tools/umap_plot_like.md")),
];

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("tool {0:?} is already registered")]
    Duplicate(String),
    #[error("tool name must be a non-empty identifier, got {0:?}")]
    BadName(String),
    #[error("tool {0:?} has an empty doc")]
    EmptyDoc(String),
    #[error("tool {0:?} serves no task kinds")]
    NoKinds(String),
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("cannot read tools from {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub summary: String,
    pub task_kinds: BTreeSet<SubtaskKind>,
    pub doc: String,
    pub invocation_hint: String,
}

impl ToolDescriptor {
    /// Parses the `tools/<name>.md` format: `key: value` header lines
    /// (`name`, `summary`, `kinds`, optional `invocation`), a blank line,
    /// then the doc body.
    pub fn parse(text: &str, origin: &str) -> Result<Self, RegistrationError> {
        let err = |message: String| RegistrationError::Parse { origin: origin.to_string(), message };
        let text = text.replace("\r\n", "\n");
        let (header, body) = text.split_once("\n\n").unwrap_or((text.as_str(), ""));
        let mut fields = BTreeMap::new();
        for (i, line) in header.lines().enumerate() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| err(format!("header line {} is not `key: value`", i + 1)))?;
            let k = k.trim().to_ascii_lowercase();
            if !matches!(k.as_str(), "name" | "summary" | "kinds" | "invocation") {
                return Err(err(format!("unknown header key {k:?}")));
            }
            fields.insert(k, v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| err(format!("missing header key {k:?}")));
        let mut task_kinds = BTreeSet::new();
        for k in get("kinds")?.split(',').map(str::trim).filter(|k| !k.is_empty()) {
            task_kinds.insert(k.parse::<SubtaskKind>().map_err(err)?);
        }
        Ok(Self {
            name: get("name")?,
            summary: get("summary")?,
            task_kinds,
            doc: body.trim().to_string(),
            invocation_hint: fields.get("invocation").cloned().unwrap_or_default(),
        })
    }
}

/// What the tool selector sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolSummary {
    pub name: String,
    pub summary: String,
    pub invocation_hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolListing {
    pub tools: Vec<ToolSummary>,
    /// True when the listing is the whole catalog rather than a kind match.
    pub full_catalog: bool,
}

impl ToolListing {
    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.full_catalog {
            out.push_str("(full catalog: no tool is registered for this task kind)\n");
        }
        for t in &self.tools {
            out.push_str(&format!("- {}: {}\n", t.name, t.summary));
        }
        if self.tools.is_empty() {
            out.push_str("(no tools registered)\n");
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocLookup {
    pub docs: BTreeMap<String, String>,
    pub missing: Vec<String>,
    /// Names whose doc was cut to the byte budget.
    pub truncated: Vec<String>,
}

impl DocLookup {
    pub fn render(&self) -> String {
        if self.docs.is_empty() {
            return "(no tool documentation; write general-purpose code)".to_string();
        }
        let mut out = String::new();
        for (name, doc) in &self.docs {
            out.push_str(&format!("## {name}\n{doc}\n"));
            if self.truncated.contains(name) {
                out.push_str("[documentation truncated]\n");
            }
            out.push('\n');
        }
        out.trim_end().to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDescriptor>,
    doc_budget: usize,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self { tools: BTreeMap::new(), doc_budget: DEFAULT_DOC_BUDGET }
    }

    /// The built-in catalog of stub descriptors.
    pub fn with_default_catalog() -> Self {
        let mut reg = Self::new();
        for (file, text) in BUILTIN {
            let d = ToolDescriptor::parse(text, file).expect("built-in tool descriptor parses");
            reg.register(d).expect("built-in tools are unique");
        }
        reg
    }

    pub fn with_doc_budget(mut self, bytes: usize) -> Self {
        self.doc_budget = bytes.max(1);
        self
    }

    pub fn register(&mut self, d: ToolDescriptor) -> Result<(), RegistrationError> {
        let valid_name = !d.name.is_empty() && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid_name {
            return Err(RegistrationError::BadName(d.name));
        }
        if d.doc.trim().is_empty() {
            return Err(RegistrationError::EmptyDoc(d.name));
        }
        if d.task_kinds.is_empty() {
            return Err(RegistrationError::NoKinds(d.name));
        }
        if self.tools.contains_key(&d.name) {
            return Err(RegistrationError::Duplicate(d.name));
        }
        self.tools.insert(d.name.clone(), d);
        Ok(())
    }

    /// Registers every `*.md` file in `dir`, in file-name order.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, RegistrationError> {
        let io = |source| RegistrationError::Io { path: dir.to_path_buf(), source };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "md"))
            .collect();
        files.sort();
        for f in &files {
            let text =
                std::fs::read_to_string(f).map_err(|source| RegistrationError::Io { path: f.clone(), source })?;
            self.register(ToolDescriptor::parse(&text, &f.display().to_string())?)?;
        }
        Ok(files.len())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Whether `name` is registered and usable for `kind`. Every tool is
    /// usable for `other`.
    pub fn serves(&self, name: &str, kind: SubtaskKind) -> bool {
        self.tools.get(name).is_some_and(|d| kind == SubtaskKind::Other || d.task_kinds.contains(&kind))
    }

    /// Summaries of the tools serving `kind`; the whole catalog, flagged,
    /// for `other` or when nothing matches.
    pub fn list_for(&self, kind: SubtaskKind) -> ToolListing {
        let summary = |d: &ToolDescriptor| ToolSummary {
            name: d.name.clone(),
            summary: d.summary.clone(),
            invocation_hint: d.invocation_hint.clone(),
        };
        let matching: Vec<ToolSummary> =
            self.tools.values().filter(|d| d.task_kinds.contains(&kind)).map(summary).collect();
        if kind == SubtaskKind::Other || matching.is_empty() {
            ToolListing { tools: self.tools.values().map(summary).collect(), full_catalog: true }
        } else {
            ToolListing { tools: matching, full_catalog: false }
        }
    }

    pub fn docs<S: AsRef<str>>(&self, names: &[S]) -> DocLookup {
        let mut out = DocLookup::default();
        for name in names {
            let name = name.as_ref();
            match self.tools.get(name) {
                Some(d) => {
                    let mut doc = d.doc.clone();
                    if !d.invocation_hint.is_empty() {
                        doc = format!("Call: {}\n\n{}", d.invocation_hint, doc);
                    }
                    if doc.len() > self.doc_budget {
                        let mut cut = self.doc_budget;
                        while !doc.is_char_boundary(cut) {
                            cut -= 1;
                        }
                        doc.truncate(cut);
                        out.truncated.push(name.to_string());
                    }
                    out.docs.insert(name.to_string(), doc);
                }
                None if !out.missing.iter().any(|m| m == name) => out.missing.push(name.to_string()),
                None => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool(name: &str, kinds: &[SubtaskKind]) -> ToolDescriptor {
        ToolDescriptor {
            name: name.into(),
            summary: format!("{name} summary"),
            task_kinds: kinds.iter().copied().collect(),
            doc: format!("{name} doc"),
            invocation_hint: String::new(),
        }
    }

    #[test]
    fn register_then_list() {
        let mut r = ToolRegistry::new();
        r.register(tool("harmony_like", &[SubtaskKind::BatchCorrection])).unwrap();
        assert_eq!(r.list_for(SubtaskKind::BatchCorrection).names(), ["harmony_like"]);
    }

    #[test]
    fn registration_errors() {
        let mut r = ToolRegistry::new();
        r.register(tool("a", &[SubtaskKind::Other])).unwrap();
        assert!(matches!(r.register(tool("a", &[SubtaskKind::Other])), Err(RegistrationError::Duplicate(_))));
        let mut empty = tool("b", &[SubtaskKind::Other]);
        empty.doc = "  ".into();
        assert!(matches!(r.register(empty), Err(RegistrationError::EmptyDoc(_))));
        assert!(matches!(r.register(tool("c", &[])), Err(RegistrationError::NoKinds(_))));
    }

    #[test]
    fn default_catalog_by_kind() {
        let r = ToolRegistry::with_default_catalog();
        let batch_listing = r.list_for(SubtaskKind::BatchCorrection);
        let batch: BTreeSet<&str> = batch_listing.names().into_iter().collect();
        let expected: BTreeSet<&str> =
            ["scvi_like", "harmony_like", "combat_like", "scanorama_like", "liger_like"].into_iter().collect();
        assert_eq!(batch, expected);
        let traj = r.list_for(SubtaskKind::TrajectoryInference);
        assert!(!traj.full_catalog);
        for t in ["slingshot_like", "paga_like", "scorpius_like"] {
            assert!(traj.names().contains(&t), "{t}");
        }
        let ann_listing = r.list_for(SubtaskKind::CellAnnotation);
        let ann = ann_listing.names();
        for t in ["cellmarker_like", "act_like", "celltypist_like", "scsa_like", "sctype_like", "llm_annotator_like"] {
            assert!(ann.contains(&t), "{t}");
        }
    }

    #[test]
    fn other_kind_gets_flagged_full_catalog() {
        let r = ToolRegistry::with_default_catalog();
        let l = r.list_for(SubtaskKind::Other);
        assert!(l.full_catalog);
        assert_eq!(l.tools.len(), r.len());
        let mut only_batch = ToolRegistry::new();
        only_batch.register(tool("x", &[SubtaskKind::BatchCorrection])).unwrap();
        assert!(only_batch.list_for(SubtaskKind::Visualization).full_catalog);
    }

    #[test]
    fn docs_report_missing_names() {
        let r = ToolRegistry::with_default_catalog();
        let d = r.docs(&["harmony_like"]);
        assert!(d.docs["harmony_like"].contains("soft k-means"));
        assert!(r.docs::<&str>(&[]).docs.is_empty());
        let d = r.docs(&["harmony_like", "nonexistent"]);
        assert_eq!(d.docs.len(), 1);
        assert_eq!(d.missing, ["nonexistent"]);
    }

    #[test]
    fn docs_truncate_at_budget() {
        let mut r = ToolRegistry::new().with_doc_budget(10);
        let mut t = tool("long", &[SubtaskKind::Other]);
        t.doc = "ééééééééééé".into();
        r.register(t).unwrap();
        let d = r.docs(&["long"]);
        assert!(d.docs["long"].len() <= 10);
        assert_eq!(d.truncated, ["long"]);
    }

    #[test]
    fn parse_rejects_unknown_kind_and_keys() {
        assert!(ToolDescriptor::parse("name: a\nsummary: s\nkinds: juggling\n\ndoc", "t").is_err());
        assert!(ToolDescriptor::parse("name: a\nsummary: s\nkinds: other\ncolour: red\n\ndoc", "t").is_err());
        let d = ToolDescriptor::parse("name: a\nsummary: s\nkinds: other, preprocess\n\nbody", "t").unwrap();
        assert_eq!(d.task_kinds.len(), 2);
        assert_eq!(d.doc, "body");
    }

    #[test]
    fn load_dir_adds_tools() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mine.md"), "name: mine\nsummary: s\nkinds: other\n\nuse it").unwrap();
        std::fs::write(dir.path().join("ignore.txt"), "x").unwrap();
        let mut r = ToolRegistry::with_default_catalog();
        assert_eq!(r.load_dir(dir.path()).unwrap(), 1);
        assert!(r.get("mine").is_some());
    }
}
