//! Dataset ingestion and the text rendering handed to the roles.
//!
//! Supported input: a delimited cells × genes matrix (`.csv`, `.tsv`, `.txt`)
//! whose header row names the genes and whose first column holds cell ids,
//! optionally accompanied by an `obs.csv` (or `<stem>.obs.csv`) sidecar with
//! per-cell annotations keyed by cell id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("unsupported or empty dataset: {0}")]
    Unsupported(String),
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub text_repr: String,
    pub n_obs: usize,
    pub n_var: usize,
}

/// Parsed expression matrix plus observation annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cell_ids: Vec<String>,
    pub genes: Vec<String>,
    /// Row-major `n_obs × n_var`.
    pub values: Vec<f64>,
    /// Column name → per-cell values (aligned with `cell_ids`).
    pub obs: BTreeMap<String, Vec<String>>,
    /// Original column order of the sidecar.
    pub obs_columns: Vec<String>,
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn n_var(&self) -> usize {
        self.genes.len()
    }

    pub fn value(&self, cell: usize, gene: usize) -> f64 {
        self.values[cell * self.genes.len() + gene]
    }
}

fn delimiter_for(path: &Path) -> Result<u8, DataError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => Ok(b','),
        Some("tsv") | Some("txt") | Some("tab") => Ok(b'\t'),
        Some("h5ad") | Some("h5") | Some("hdf5") => Err(DataError::Unsupported(format!(
            "{}: HDF5 containers are summarized by the Python kernel worker, not the built-in reader",
            path.display()
        ))),
        _ => Err(DataError::Unsupported(format!("{}: unrecognized extension", path.display()))),
    }
}

fn read_rows(path: &Path, delim: u8) -> Result<Vec<(usize, Vec<String>)>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Unreadable { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(|f| f.trim().to_string()).collect()));
    }
    Ok(rows)
}

fn sidecar_for(path: &Path) -> Option<PathBuf> {
    let dir = path.parent()?;
    let stem = path.file_stem()?.to_str()?;
    [dir.join(format!("{stem}.obs.csv")), dir.join("obs.csv")]
        .into_iter()
        .find(|p| p.is_file() && p != path)
}

/// Loads the matrix and its sidecar, validating every value.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let delim = delimiter_for(path)?;
    let rows = read_rows(path, delim)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(DataError::Unsupported(format!("{}: file is empty", path.display())));
    };
    if header.len() < 2 || body.is_empty() {
        return Err(DataError::Unsupported(format!(
            "{}: need a header of gene names and at least one cell row",
            path.display()
        )));
    }
    let genes: Vec<String> = header[1..].to_vec();
    let mut cell_ids = Vec::with_capacity(body.len());
    let mut values = Vec::with_capacity(body.len() * genes.len());
    for (line, row) in body {
        if row.len() != header.len() {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line: *line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        cell_ids.push(row[0].clone());
        for raw in &row[1..] {
            let v: f64 = raw.parse().map_err(|_| DataError::Malformed {
                path: path.to_path_buf(),
                line: *line,
                message: format!("non-numeric expression value {raw:?}"),
            })?;
            values.push(v);
        }
    }
    let mut obs = BTreeMap::new();
    let mut obs_columns = Vec::new();
    if let Some(side) = sidecar_for(path) {
        let rows = read_rows(&side, b',')?;
        if let Some(((_, head), body)) = rows.split_first() {
            let index: BTreeMap<&str, &Vec<String>> =
                body.iter().map(|(_, r)| (r[0].as_str(), r)).collect();
            for (c, name) in head.iter().enumerate().skip(1) {
                let column: Vec<String> = cell_ids
                    .iter()
                    .map(|id| index.get(id.as_str()).and_then(|r| r.get(c)).cloned().unwrap_or_default())
                    .collect();
                obs_columns.push(name.clone());
                obs.insert(name.clone(), column);
            }
        }
    }
    Ok(Dataset { cell_ids, genes, values, obs, obs_columns })
}

fn preview<'a>(items: impl Iterator<Item = &'a String>, limit: usize) -> String {
    let items: Vec<&String> = items.collect();
    let mut parts: Vec<String> = items.iter().take(limit).map(|s| format!("'{s}'")).collect();
    if items.len() > limit {
        parts.push(format!("... ({} total)", items.len()));
    }
    parts.join(", ")
}

/// Text rendering of a dataset: dimensions, annotation columns with their
/// categories, gene names and a few sample values.
pub fn render_summary(ds: &Dataset) -> DataSummary {
    let mut text = String::new();
    let _ = writeln!(text, "AnnData object with n_obs × n_vars = {} × {}", ds.n_obs(), ds.n_var());
    if !ds.obs_columns.is_empty() {
        let _ = writeln!(text, "    obs: {}", preview(ds.obs_columns.iter(), 20));
        for col in &ds.obs_columns {
            let mut cats: Vec<&String> = ds.obs[col].iter().collect();
            cats.sort();
            cats.dedup();
            let _ = writeln!(text, "        {col}: {} categories [{}]", cats.len(), preview(cats.into_iter(), 8));
        }
    }
    let _ = writeln!(text, "    var: {}", preview(ds.genes.iter(), 10));
    let shown_genes = ds.n_var().min(5);
    let _ = writeln!(text, "    sample values (first {} cells × {} genes):", ds.n_obs().min(3), shown_genes);
    for cell in 0..ds.n_obs().min(3) {
        let vals: Vec<String> = (0..shown_genes).map(|g| format!("{}", ds.value(cell, g))).collect();
        let _ = writeln!(text, "        {}: [{}]", ds.cell_ids[cell], vals.join(", "));
    }
    DataSummary { text_repr: text, n_obs: ds.n_obs(), n_var: ds.n_var() }
}

pub fn summarize_data(path: &Path) -> Result<DataSummary, DataError> {
    let meta = std::fs::metadata(path)
        .map_err(|source| DataError::Unreadable { path: path.to_path_buf(), source })?;
    if meta.len() == 0 {
        return Err(DataError::Unsupported(format!("{}: file is empty", path.display())));
    }
    Ok(render_summary(&load_dataset(path)?))
}
