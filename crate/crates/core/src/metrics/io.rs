//! CSV readers for the standalone scoring command.
//!
//! Every reader expects a header row. Errors carry the file, 1-based line and
//! column of the offending cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::trajectory::{score_trajectory, CorDistOptions, ExpressionMatrix, FeatureSource, Trajectory};
use super::{
    annotation_accuracy, score_batch, BatchInputs, BatchWeights, Embedding, LabelVector, MatchClass, MetricError,
    MetricReport,
};

#[derive(Debug, Error)]
pub enum InputFileError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Malformed { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, InputFileError>;

struct Table {
    path: PathBuf,
    header: Vec<String>,
    /// `(line number, fields)`
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| InputFileError::Open { path: path.to_path_buf(), source })?;
        let delim = if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delim)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let malformed = |line: usize, message: String| InputFileError::Malformed {
            path: path.to_path_buf(),
            line,
            column: 1,
            message,
        };
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| malformed(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(InputFileError::Invalid { path: path.to_path_buf(), message: "empty file".into() });
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                malformed(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.iter().all(str::is_empty) {
                continue;
            }
            if rec.len() != header.len() {
                return Err(InputFileError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    column: rec.len().min(header.len()) + 1,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    fn column(&self, names: &[&str]) -> Result<usize> {
        self.header
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
            .ok_or_else(|| InputFileError::Malformed {
                path: self.path.clone(),
                line: 1,
                column: 1,
                message: format!("missing column {:?}", names[0]),
            })
    }

    fn number(&self, line: usize, column: usize, raw: &str) -> Result<f64> {
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| InputFileError::Malformed {
            path: self.path.clone(),
            line,
            column: column + 1,
            message: format!("expected a finite number, found {raw:?}"),
        })
    }

    fn invalid(&self, message: impl Into<String>) -> InputFileError {
        InputFileError::Invalid { path: self.path.clone(), message: message.into() }
    }
}

/// `cell_id,label`
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let t = Table::read(path)?;
    if t.header.len() < 2 {
        return Err(t.invalid("expected columns cell_id,label"));
    }
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        if out.insert(row[0].clone(), row[1].clone()).is_some() {
            return Err(InputFileError::Malformed {
                path: t.path.clone(),
                line: *line,
                column: 1,
                message: format!("duplicate cell id {}", row[0]),
            });
        }
    }
    Ok(out)
}

/// `cell_id,dim1..dimd`; returns cell ids in file order with the embedding.
pub fn read_embedding(path: &Path) -> Result<(Vec<String>, Embedding)> {
    let t = Table::read(path)?;
    if t.header.len() < 2 {
        return Err(t.invalid("expected columns cell_id,dim1..dimd"));
    }
    let d = t.header.len() - 1;
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut data = Vec::with_capacity(t.rows.len() * d);
    for (line, row) in &t.rows {
        ids.push(row[0].clone());
        for (c, raw) in row.iter().enumerate().skip(1) {
            data.push(t.number(*line, c, raw)?);
        }
    }
    let n = ids.len();
    let emb = Embedding::new(data, n, d).map_err(|e| t.invalid(e.to_string()))?;
    Ok((ids, emb))
}

/// Orders labels to match `cells`; every cell must be labeled.
pub fn align_labels(
    path: &Path,
    labels: &BTreeMap<String, String>,
    cells: &[String],
) -> Result<LabelVector> {
    let mut values = Vec::with_capacity(cells.len());
    for c in cells {
        match labels.get(c) {
            Some(l) => values.push(l.clone()),
            None => {
                return Err(InputFileError::Invalid {
                    path: path.to_path_buf(),
                    message: format!("no label for cell {c}"),
                })
            }
        }
    }
    Ok(LabelVector::new(values))
}

/// Reorders an embedding's rows to match `cells`.
pub fn align_embedding(
    path: &Path,
    ids: &[String],
    emb: &Embedding,
    cells: &[String],
) -> Result<Embedding> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(cells.len());
    for c in cells {
        let Some(&i) = index.get(c.as_str()) else {
            return Err(InputFileError::Invalid {
                path: path.to_path_buf(),
                message: format!("cell {c} missing from embedding"),
            });
        };
        rows.push(emb.row(i).to_vec());
    }
    Embedding::from_rows(&rows).map_err(|e| InputFileError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `network.csv` (`from,to,length`) plus `positions.csv`
/// (`cell_id,milestone,percentage`).
pub fn read_trajectory(network: &Path, positions: &Path) -> Result<Trajectory> {
    let net = Table::read(network)?;
    let (cf, ct, cl) = (net.column(&["from"])?, net.column(&["to"])?, net.column(&["length"])?);
    let mut edges = Vec::new();
    for (line, row) in &net.rows {
        edges.push((row[cf].clone(), row[ct].clone(), net.number(*line, cl, &row[cl])?));
    }
    let pos = Table::read(positions)?;
    let (cc, cm, cp) = (
        pos.column(&["cell_id", "cell"])?,
        pos.column(&["milestone", "milestone_id"])?,
        pos.column(&["percentage", "pct"])?,
    );
    let mut mixtures: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (line, row) in &pos.rows {
        let pct = pos.number(*line, cp, &row[cp])?;
        mixtures.entry(row[cc].clone()).or_default().push((row[cm].clone(), pct));
    }
    let mixtures: Vec<_> = mixtures.into_iter().collect();
    Trajectory::new(&edges, &mixtures).map_err(|e| pos.invalid(e.to_string()))
}

/// Two-column `name,value` files: feature importance (`feature,score`) and
/// precomputed metric values (`metric,value`).
pub fn read_named_values(path: &Path) -> Result<BTreeMap<String, f64>> {
    let t = Table::read(path)?;
    if t.header.len() < 2 {
        return Err(t.invalid("expected two columns: name,value"));
    }
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        out.insert(row[0].clone(), t.number(*line, 1, &row[1])?);
    }
    Ok(out)
}

/// Cells × features matrix with a header of feature names and cell ids in
/// the first column.
pub fn read_expression(path: &Path) -> Result<ExpressionMatrix> {
    let t = Table::read(path)?;
    if t.header.len() < 2 {
        return Err(t.invalid("expected cell_id followed by feature columns"));
    }
    let features = t.header[1..].to_vec();
    let mut cells = BTreeMap::new();
    for (line, row) in &t.rows {
        let values =
            row.iter().enumerate().skip(1).map(|(c, raw)| t.number(*line, c, raw)).collect::<Result<Vec<_>>>()?;
        cells.insert(row[0].clone(), values);
    }
    Ok(ExpressionMatrix { features, cells })
}

/// Match-class table: either a `match` column, or `predicted` and `expected`
/// columns classified by `judge`.
pub fn read_match_classes(
    path: &Path,
    judge: &dyn Fn(&str, &str) -> MatchClass,
) -> Result<Vec<(String, MatchClass)>> {
    let t = Table::read(path)?;
    let cluster = t.column(&["cluster", "cluster_id", "cell_type"]).unwrap_or(0);
    let mut out = Vec::new();
    if let Ok(mc) = t.column(&["match", "match_class", "class"]) {
        for (line, row) in &t.rows {
            let class = row[mc].parse::<MatchClass>().map_err(|e| InputFileError::Malformed {
                path: t.path.clone(),
                line: *line,
                column: mc + 1,
                message: e.to_string(),
            })?;
            out.push((row[cluster].clone(), class));
        }
    } else {
        let p = t.column(&["predicted", "prediction"])?;
        let e = t.column(&["expected", "expert", "truth"])?;
        for (_, row) in &t.rows {
            out.push((row[cluster].clone(), judge(&row[p], &row[e])));
        }
    }
    if out.is_empty() {
        return Err(t.invalid("no clusters listed"));
    }
    Ok(out)
}

/// Default label judge: case- and punctuation-insensitive equality is a full
/// match; a shared head word (e.g. "CD4 T cells" vs "CD8 T cells") is partial.
pub fn exact_label_judge(predicted: &str, expected: &str) -> MatchClass {
    let norm = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase().trim_end_matches('s').to_string())
            .collect()
    };
    let (p, e) = (norm(predicted), norm(expected));
    if p == e {
        return MatchClass::FullyMatch;
    }
    let generic = ["cell", "positive", "negative"];
    let informative = |w: &&String| !generic.contains(&w.as_str());
    if p.iter().filter(informative).any(|w| e.iter().filter(informative).any(|x| x == w)) {
        MatchClass::PartialMatch
    } else {
        MatchClass::Mismatch
    }
}


/// Failure of a file-driven scoring command.
#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    File(#[from] InputFileError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Annotation consistency from a match-class table.
pub fn score_annotation_file(path: &Path) -> std::result::Result<MetricReport, ScoreError> {
    let rows = read_match_classes(path, &exact_label_judge)?;
    let classes: Vec<MatchClass> = rows.iter().map(|(_, c)| *c).collect();
    let accuracy = annotation_accuracy(&classes)?;
    let mut counts = BTreeMap::new();
    for c in &classes {
        *counts.entry(format!("n_{c}")).or_insert(0.0) += 1.0;
    }
    Ok(MetricReport {
        kind: "annotation".into(),
        per_metric: BTreeMap::from([("accuracy".to_string(), accuracy)]),
        extras: counts,
        group_means: BTreeMap::new(),
        overall: accuracy,
        flags: Vec::new(),
        seed: None,
    })
}

/// Inputs for batch scoring: either precomputed `metric,value` rows or the
/// raw embedding and label files.
#[derive(Debug, Clone, Default)]
pub struct BatchFiles {
    pub values: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub embedding_before: Option<PathBuf>,
    pub batches: Option<PathBuf>,
    pub cell_types: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub k: usize,
}

pub fn score_batch_files(files: &BatchFiles, weights: BatchWeights) -> std::result::Result<MetricReport, ScoreError> {
    if let Some(p) = &files.values {
        return Ok(MetricReport::from_batch_values(&read_named_values(p)?, weights)?);
    }
    let Some(emb_path) = &files.embedding else {
        return Err(MetricError::Missing("embedding".into()).into());
    };
    let (cells, embedding) = read_embedding(emb_path)?;
    let embedding_before = match &files.embedding_before {
        Some(p) => {
            let (ids, e) = read_embedding(p)?;
            Some(align_embedding(p, &ids, &e, &cells)?)
        }
        None => None,
    };
    let labels = |p: &Option<PathBuf>| -> Result<Option<LabelVector>> {
        match p {
            Some(p) => Ok(Some(align_labels(p, &read_labels(p)?, &cells)?)),
            None => Ok(None),
        }
    };
    let inputs = BatchInputs {
        embedding: Some(embedding),
        embedding_before,
        batches: labels(&files.batches)?,
        cell_types: labels(&files.cell_types)?,
        clusters: labels(&files.clusters)?,
        k: files.k,
    };
    Ok(score_batch(&inputs, weights)?)
}

/// Inputs for trajectory scoring. Feature importance comes from two
/// `feature,score` files or from an expression matrix plus reference root.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryFiles {
    pub reference_network: PathBuf,
    pub reference_positions: PathBuf,
    pub predicted_network: PathBuf,
    pub predicted_positions: PathBuf,
    pub reference_importance: Option<PathBuf>,
    pub predicted_importance: Option<PathBuf>,
    pub expression: Option<PathBuf>,
    pub reference_root: Option<String>,
}

pub fn score_trajectory_files(
    files: &TrajectoryFiles,
    options: CorDistOptions,
) -> std::result::Result<MetricReport, ScoreError> {
    let reference = read_trajectory(&files.reference_network, &files.reference_positions)?;
    let predicted = read_trajectory(&files.predicted_network, &files.predicted_positions)?;
    match (&files.reference_importance, &files.predicted_importance, &files.expression, &files.reference_root) {
        (Some(r), Some(p), _, _) => {
            let (r, p) = (read_named_values(r)?, read_named_values(p)?);
            let src = FeatureSource::Importance { reference: &r, predicted: &p };
            Ok(score_trajectory(&reference, &predicted, src, options)?)
        }
        (_, _, Some(x), Some(root)) => {
            let matrix = read_expression(x)?;
            let src = FeatureSource::Expression { matrix: &matrix, reference_root: root };
            Ok(score_trajectory(&reference, &predicted, src, options)?)
        }
        (Some(_), None, _, _) => Err(MetricError::Missing("predicted feature importance".into()).into()),
        (None, Some(_), _, _) => Err(MetricError::Missing("reference feature importance".into()).into()),
        (_, _, Some(_), None) => Err(MetricError::Missing("reference root milestone".into()).into()),
        _ => Err(MetricError::Missing("feature importance".into()).into()),
    }
}
