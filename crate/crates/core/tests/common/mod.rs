//! Independent reference implementations and scenario builders shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use cellpilot_core::config::{Config, EvaluationMode, PolicyOverride};
use cellpilot_core::gateway::{CallKey, RoleKind, ScriptedBackend};
use cellpilot_core::metrics::trajectory::Trajectory;
use cellpilot_core::metrics::{Embedding, LabelVector};
use cellpilot_core::task::SubtaskKind;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn prompts_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts")
}

// ---- partition oracles ----

/// ARI from pair counts over all `n(n-1)/2` cell pairs.
pub fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    if n10 == 0.0 && n01 == 0.0 {
        return 1.0;
    }
    let denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if denom == 0.0 {
        return 0.0;
    }
    2.0 * (n00 * n11 - n01 * n10) / denom
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// NMI with arithmetic-mean normalization from hash-map counts.
pub fn brute_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    let mut cab: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *cab.entry((x, y)).or_default() += 1;
    }
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let ha = entropy_of(ca.values().copied(), n);
    let hb = entropy_of(cb.values().copied(), n);
    let hab = entropy_of(cab.values().copied(), n);
    let mi = (ha + hb - hab).max(0.0);
    (mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0)
}

// ---- silhouette oracle ----

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Direct O(n^2) silhouette per cell; singletons and single-cluster inputs
/// score 0.
pub fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    (0..points.len())
        .map(|i| {
            let mean_to = |c: usize| {
                let others: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == c).collect();
                if others.is_empty() {
                    None
                } else {
                    Some(others.iter().map(|&j| euclid(&points[i], &points[j])).sum::<f64>() / others.len() as f64)
                }
            };
            let Some(a) = mean_to(labels[i]) else { return 0.0 };
            let b = clusters
                .iter()
                .filter(|&&c| c != labels[i])
                .filter_map(|&c| mean_to(c))
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() || a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

// ---- edgeflip oracle ----

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exhaustive search over all milestone bijections.
pub fn brute_edgeflip(ref_edges: &BTreeSet<(usize, usize)>, pred_edges: &BTreeSet<(usize, usize)>, n: usize) -> f64 {
    let total = ref_edges.len() + pred_edges.len();
    if total == 0 {
        return 1.0;
    }
    let mut best = 0;
    for perm in permutations(n) {
        let common = ref_edges
            .iter()
            .filter(|&&(u, v)| {
                let (x, y) = (perm[u], perm[v]);
                pred_edges.contains(&(x.min(y), x.max(y)))
            })
            .count();
        best = best.max(common);
    }
    let flips = total - 2 * best;
    (1.0 - flips as f64 / total as f64).max(0.0)
}

/// A random connected network on `m` milestones (spanning tree plus extra
/// edges) with one cell at every milestone.
pub fn random_network(rng: &mut ChaCha8Rng, m: usize, prefix: &str) -> (Trajectory, BTreeSet<(usize, usize)>) {
    let mut edges = BTreeSet::new();
    for v in 1..m {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    let extra = rng.random_range(0..=m);
    for _ in 0..extra {
        let (u, v) = (rng.random_range(0..m), rng.random_range(0..m));
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    // Milestone names sort in index order so topology indices match ours.
    let name = |i: usize| format!("{prefix}{i:02}");
    let net: Vec<(String, String, f64)> = edges.iter().map(|&(u, v)| (name(u), name(v), 1.0)).collect();
    let positions: Vec<(String, Vec<(String, f64)>)> =
        (0..m).map(|i| (format!("cell{i}"), vec![(name(i), 1.0)])).collect();
    (Trajectory::new(&net, &positions).expect("connected network"), edges)
}

// ---- random inputs ----

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect()
}

pub fn lv(codes: &[usize]) -> LabelVector {
    LabelVector::from_codes(codes)
}

pub fn emb(points: &[Vec<f64>]) -> Embedding {
    Embedding::from_rows(points).expect("finite points")
}

// ---- notebook validation ----

/// Structural nbformat v4 check: required keys and types for the notebook,
/// every cell and every output. Returns the first problem found.
pub fn validate_nbformat_v4(nb: &Value) -> Result<(), String> {
    let obj = nb.as_object().ok_or("notebook is not an object")?;
    for key in ["cells", "metadata", "nbformat", "nbformat_minor"] {
        if !obj.contains_key(key) {
            return Err(format!("missing top-level key {key}"));
        }
    }
    if obj["nbformat"] != 4 {
        return Err(format!("nbformat is {}, expected 4", obj["nbformat"]));
    }
    let minor = obj["nbformat_minor"].as_u64().ok_or("nbformat_minor is not an integer")?;
    if !obj["metadata"].is_object() {
        return Err("metadata is not an object".into());
    }
    let is_multiline = |v: &Value| v.is_string() || v.as_array().is_some_and(|a| a.iter().all(Value::is_string));
    let cells = obj["cells"].as_array().ok_or("cells is not an array")?;
    let mut ids = BTreeSet::new();
    for (i, cell) in cells.iter().enumerate() {
        let c = cell.as_object().ok_or(format!("cell {i} is not an object"))?;
        let kind = c.get("cell_type").and_then(Value::as_str).ok_or(format!("cell {i} has no cell_type"))?;
        if !["code", "markdown", "raw"].contains(&kind) {
            return Err(format!("cell {i} has unknown cell_type {kind}"));
        }
        if !c.get("metadata").is_some_and(Value::is_object) {
            return Err(format!("cell {i} metadata is not an object"));
        }
        if !c.get("source").is_some_and(is_multiline) {
            return Err(format!("cell {i} source is not a multiline string"));
        }
        if minor >= 5 {
            let id = c.get("id").and_then(Value::as_str).ok_or(format!("cell {i} has no id"))?;
            let valid = !id.is_empty()
                && id.len() <= 64
                && id.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
            if !valid || !ids.insert(id.to_string()) {
                return Err(format!("cell {i} id {id:?} is invalid or duplicated"));
            }
        }
        if kind != "code" {
            continue;
        }
        match c.get("execution_count") {
            Some(Value::Null) => {}
            Some(v) if v.is_u64() => {}
            _ => return Err(format!("cell {i} execution_count is not null or an integer")),
        }
        let outputs = c.get("outputs").and_then(Value::as_array).ok_or(format!("cell {i} outputs is not an array"))?;
        for (j, out) in outputs.iter().enumerate() {
            let ty = out.get("output_type").and_then(Value::as_str).ok_or(format!("cell {i} output {j} untyped"))?;
            let ok = match ty {
                "stream" => {
                    out.get("name").and_then(Value::as_str).is_some_and(|n| n == "stdout" || n == "stderr")
                        && out.get("text").is_some_and(is_multiline)
                }
                "error" => {
                    out.get("ename").is_some_and(Value::is_string)
                        && out.get("evalue").is_some_and(Value::is_string)
                        && out.get("traceback").and_then(Value::as_array).is_some_and(|t| t.iter().all(Value::is_string))
                }
                "display_data" | "execute_result" => out.get("data").is_some_and(Value::is_object),
                _ => false,
            };
            if !ok {
                return Err(format!("cell {i} output {j} ({ty}) is malformed"));
            }
        }
    }
    Ok(())
}

// ---- scripted scenarios ----

/// One generated scripted run: replies, plus the analysis tokens each
/// subtask's programmer replies carry.
pub struct Scenario {
    pub backend: ScriptedBackend,
    pub config: Config,
    pub kinds: Vec<SubtaskKind>,
    pub tokens: BTreeMap<u32, Vec<String>>,
    /// Steps expected to complete before the first failure.
    pub expected_completed: usize,
}

const FUZZ_MAX_FIX: u32 = 2;

fn tools_for(kind: SubtaskKind) -> &'static [&'static str] {
    match kind {
        SubtaskKind::Preprocess => &["qc_filter_like", "normalize_like"],
        SubtaskKind::BatchCorrection => &["harmony_like", "combat_like"],
        SubtaskKind::Visualization => &["umap_plot_like"],
        _ => &["leiden_like"],
    }
}

/// Random plan of 1-5 subtasks. Each trial fails a random number of times
/// before succeeding; occasionally a trial never succeeds. Every programmer
/// reply carries a unique token in its analysis text only.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = rng(seed);
    let pool = [SubtaskKind::Preprocess, SubtaskKind::BatchCorrection, SubtaskKind::Visualization, SubtaskKind::Other];
    let n_steps = rng.random_range(1..=5);
    let kinds: Vec<SubtaskKind> = (0..n_steps).map(|_| *pool.choose(&mut rng).unwrap()).collect();

    let mut config = Config::default();
    config.sandbox.cell_timeout_secs = 30.0;
    for k in pool {
        let mut o = PolicyOverride { max_fix_attempts: Some(FUZZ_MAX_FIX), ..Default::default() };
        if k == SubtaskKind::BatchCorrection {
            o.max_trials = Some(2);
            o.evaluation_mode = Some(EvaluationMode::ProgrammaticMetric);
        }
        config.policies.insert(k, o);
    }

    let backend = ScriptedBackend::new();
    let subtasks: Vec<Value> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            serde_json::json!({"title": format!("Step {}", i + 1), "description": format!("Do {k}."), "kind": k.as_str()})
        })
        .collect();
    let plan = serde_json::json!({"rationale": "generated", "subtasks": subtasks});
    backend.push(CallKey::new(RoleKind::Planner, 0, 0), plan.to_string());

    let mut tokens: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut expected_completed = 0;
    let mut failed = false;
    for (i, &kind) in kinds.iter().enumerate() {
        let id = i as u32 + 1;
        let tools = tools_for(kind);
        backend.push(CallKey::new(RoleKind::ToolSelector, id, 0), serde_json::json!({ "tools": tools }).to_string());
        let trials = if kind == SubtaskKind::BatchCorrection { 2.min(tools.len()) } else { 1 };
        let mut any_ok = false;
        for t in 1..=trials as u32 {
            let never = rng.random_bool(0.12);
            let fails = if never { FUZZ_MAX_FIX + 1 } else { rng.random_range(0..=FUZZ_MAX_FIX) };
            let attempts = if never { FUZZ_MAX_FIX + 1 } else { fails + 1 };
            for a in 0..attempts {
                let token = format!("TKN-{seed}-{id}-{t}-{a}-END");
                tokens.entry(id).or_default().push(token.clone());
                let code = if a < fails {
                    format!("missing_{a} = undefined_name_{a}")
                } else if kind == SubtaskKind::BatchCorrection {
                    format!("write_file(\"trial_metrics.csv\", \"metric,value\\noverall,0.{t}\\n\")\nprint(\"step {id} done\")")
                } else {
                    format!("print(\"step {id} done\")")
                };
                let reply = format!("Approach note {token}.\n\n```python\n{code}\n```");
                backend.push(CallKey::new(RoleKind::Programmer, id, a), reply);
            }
            any_ok |= !never;
        }
        if !failed {
            if any_ok {
                expected_completed += 1;
            } else {
                failed = true;
            }
        }
        if failed {
            break;
        }
    }
    Scenario { backend, config, kinds, tokens, expected_completed }
}

// ---- oracle sweeps ----

/// ARI and NMI against the brute-force oracles on seeded label pairs (n <= 50).
pub fn check_partition_oracles(seeds: std::ops::Range<u64>) -> Result<(), String> {
    use cellpilot_core::metrics::{ari, nmi};
    for seed in seeds {
        let mut r = rng(seed);
        let n = r.random_range(2..=50);
        let (ka, kb) = (r.random_range(1..=6), r.random_range(1..=6));
        let (a, b) = (random_labels(&mut r, n, ka), random_labels(&mut r, n, kb));
        let (got, want) = (ari(&lv(&a), &lv(&b)).map_err(|e| e.to_string())?, brute_ari(&a, &b));
        if (got - want).abs() > 1e-9 {
            return Err(format!("seed {seed}: ari {got} vs oracle {want}"));
        }
        let (got, want) = (nmi(&lv(&a), &lv(&b)).map_err(|e| e.to_string())?, brute_nmi(&a, &b));
        if (got - want).abs() > 1e-9 {
            return Err(format!("seed {seed}: nmi {got} vs oracle {want}"));
        }
    }
    Ok(())
}

/// Per-cell silhouette and ASW_cell against the direct O(n^2) oracle.
pub fn check_silhouette_oracle(seeds: std::ops::Range<u64>) -> Result<(), String> {
    use cellpilot_core::metrics::{asw, silhouette_samples, AswFlavor};
    for seed in seeds {
        let mut r = rng(1_000 + seed);
        let n = r.random_range(3..=50);
        let d = r.random_range(1..=4);
        let k = r.random_range(2..=5);
        let points = random_points(&mut r, n, d);
        let labels = random_labels(&mut r, n, k);
        let got = silhouette_samples(&emb(&points), &lv(&labels)).map_err(|e| e.to_string())?;
        let want = brute_silhouette(&points, &labels);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            if (g - w).abs() > 1e-9 {
                return Err(format!("seed {seed} cell {i}: silhouette {g} vs oracle {w}"));
            }
        }
        if lv(&labels).n_labels() >= 2 {
            let v = asw(&emb(&points), &lv(&labels), AswFlavor::Cell, None).map_err(|e| e.to_string())?;
            let mean = want.iter().sum::<f64>() / n as f64;
            if (v - (mean + 1.0) / 2.0).abs() > 1e-9 {
                return Err(format!("seed {seed}: ASW_cell {v} vs oracle {}", (mean + 1.0) / 2.0));
            }
        }
    }
    Ok(())
}

/// Edgeflip against exhaustive bijection search for networks of 2-6
/// milestones; exact equality.
pub fn check_edgeflip_oracle(seeds: std::ops::Range<u64>) -> Result<(), String> {
    use cellpilot_core::metrics::trajectory::edgeflip;
    for seed in seeds {
        let mut r = rng(2_000 + seed);
        let (m_ref, m_pred) = (r.random_range(2..=6), r.random_range(2..=6));
        let (reference, ref_edges) = random_network(&mut r, m_ref, "R");
        let (predicted, pred_edges) = random_network(&mut r, m_pred, "P");
        let got = edgeflip(&reference, &predicted).map_err(|e| e.to_string())?;
        let want = brute_edgeflip(&ref_edges, &pred_edges, m_ref.max(m_pred));
        if got != want {
            return Err(format!("seed {seed}: edgeflip {got} vs oracle {want} ({ref_edges:?} / {pred_edges:?})"));
        }
    }
    Ok(())
}
