//! Executes pipeline graphs on data and scores them with the built-in
//! classifier.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{decide_materialize, Assignment, CacheError, CacheFeatures, CachePlan, CacheStore, CostModel, Materialize};
use crate::dataset::{load_csv, split_indices, Column, ColumnData, Dataset};
use crate::linear::{accuracy, f1_score, matrix, GdConfig, LogisticModel};
use crate::ops::{apply_physical, lookup, BoundOp};
use crate::script::{Arg, Literal, PipelineGraph, PipelineNode, VarId, EVAL_OP};

/// Diagnostic builtin with quadratic cost, used to exercise the cache.
pub const SLOW_OP: &str = "pairwise_rank";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Table(Dataset),
    Scalar(f64),
}

impl Value {
    pub fn as_table(&self) -> Option<&Dataset> {
        match self {
            Value::Table(d) => Some(d),
            Value::Scalar(_) => None,
        }
    }

    fn byte_size(&self) -> u64 {
        match self {
            Value::Table(d) => d.csv_byte_size(),
            Value::Scalar(x) => format!("{x}").len() as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: usize,
    pub micros: u64,
    pub bytes: u64,
    pub trace_hash: u64,
    pub loaded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub metric: Option<f64>,
    pub error_message: Option<String>,
    pub node_reports: Vec<NodeReport>,
    pub env: BTreeMap<VarId, Value>,
    pub total_micros: u64,
}

impl ExecResult {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    fn failed(message: String, reports: Vec<NodeReport>, env: BTreeMap<VarId, Value>, total: u64) -> Self {
        Self {
            status: ExecStatus::Error,
            metric: None,
            error_message: Some(message),
            node_reports: reports,
            env,
            total_micros: total,
        }
    }

    /// Result for a program that never reached execution.
    pub fn error(message: impl Into<String>) -> Self {
        Self::failed(message.into(), Vec::new(), BTreeMap::new(), 0)
    }
}

/// Where data comes from and, optionally, which cached results to reuse.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext<'a> {
    pub data_dir: &'a Path,
    pub cache: Option<(&'a CachePlan, &'a CacheStore)>,
}

impl<'a> ExecContext<'a> {
    pub fn new(data_dir: &'a Path) -> Self {
        Self { data_dir, cache: None }
    }

    pub fn with_cache(mut self, plan: &'a CachePlan, store: &'a CacheStore) -> Self {
        self.cache = Some((plan, store));
        self
    }
}

struct NodeError(String);

impl<E: std::fmt::Display> From<E> for NodeError {
    fn from(e: E) -> Self {
        NodeError(e.to_string())
    }
}

fn err<T>(kind: &str, detail: impl std::fmt::Display) -> Result<T, NodeError> {
    Err(NodeError(format!("{kind}: {detail}")))
}

/// Runs every node in order. Failures never escape: the first failing node
/// turns into an error result whose message ends with ` at line <n>`.
pub fn execute(g: &PipelineGraph, ctx: &ExecContext<'_>) -> ExecResult {
    let start = Instant::now();
    let mut env: BTreeMap<VarId, Value> = BTreeMap::new();
    let mut reports = Vec::with_capacity(g.len());
    let mut metric = None;
    for node in g.nodes() {
        let hash = g.node_trace(node.id).unwrap_or(0);
        let assignment = ctx.cache.map(|(p, _)| p.assignment.get(node.id - 1).copied().unwrap_or(Assignment::Compute));
        if assignment == Some(Assignment::Prune) {
            continue;
        }
        let t0 = Instant::now();
        let mut loaded = None;
        if let (Some(Assignment::Load), Some((_, store))) = (assignment, ctx.cache) {
            loaded = store.load(hash).ok().map(Value::Table);
        }
        let was_loaded = loaded.is_some();
        let value = match loaded {
            Some(v) => v,
            None => match run_node(node, &env, ctx.data_dir) {
                Ok(v) => v,
                Err(NodeError(msg)) => {
                    let total = start.elapsed().as_micros() as u64;
                    return ExecResult::failed(format!("{msg} at line {}", node.source_line), reports, env, total);
                }
            },
        };
        let micros = t0.elapsed().as_micros() as u64;
        if node.is_eval() {
            if let Value::Scalar(m) = value {
                metric = Some(m);
            }
        }
        reports.push(NodeReport {
            node_id: node.id,
            micros,
            bytes: value.byte_size(),
            trace_hash: hash,
            loaded: was_loaded,
        });
        env.insert(node.output.clone(), value);
    }
    let total = start.elapsed().as_micros() as u64;
    match metric {
        Some(m) => ExecResult {
            status: ExecStatus::Ok,
            metric: Some(m),
            error_message: None,
            node_reports: reports,
            env,
            total_micros: total,
        },
        None => {
            let line = g.nodes().last().map_or(0, |n| n.source_line);
            ExecResult::failed(format!("NoEvalNode: program has no {EVAL_OP} statement at line {line}"), reports, env, total)
        }
    }
}

fn table<'e>(node: &PipelineNode, env: &'e BTreeMap<VarId, Value>, pos: usize) -> Result<&'e Dataset, NodeError> {
    match node.args.get(pos) {
        Some(Arg::Var(v)) => match env.get(v) {
            Some(Value::Table(d)) => Ok(d),
            Some(Value::Scalar(_)) => err("TypeError", format!("{} expects a table for argument {}, got a number", node.op_name, pos + 1)),
            None => err("UndefinedVariable", &v.base),
        },
        _ => err("TypeError", format!("{} expects a table variable as argument {}", node.op_name, pos + 1)),
    }
}

fn text_arg<'n>(node: &'n PipelineNode, pos: usize, name: &str) -> Result<&'n str, NodeError> {
    let lit = match node.args.get(pos) {
        Some(Arg::Lit(l)) => Some(l),
        _ => node.kwarg(name),
    };
    match lit.and_then(Literal::as_str) {
        Some(s) => Ok(s),
        None => err("TypeError", format!("{} expects a string for '{name}'", node.op_name)),
    }
}

fn literal_tail(node: &PipelineNode, from: usize) -> Result<Vec<Literal>, NodeError> {
    node.args[from.min(node.args.len())..]
        .iter()
        .map(|a| match a {
            Arg::Lit(l) => Ok(l.clone()),
            Arg::Var(v) => err("TypeError", format!("{} takes literal parameters, got variable {}", node.op_name, v.base)),
        })
        .collect()
}

fn run_node(node: &PipelineNode, env: &BTreeMap<VarId, Value>, data_dir: &Path) -> Result<Value, NodeError> {
    match node.op_name.as_str() {
        "load_csv" => {
            let path = text_arg(node, 0, "path")?;
            Ok(Value::Table(load_csv(resolve_data_path(data_dir, path)?)?))
        }
        "drop_column" => {
            let d = table(node, env, 0)?;
            Ok(Value::Table(d.without_column(text_arg(node, 1, "name")?)?))
        }
        "get_column" => {
            let d = table(node, env, 0)?;
            Ok(Value::Table(d.select(&[text_arg(node, 1, "name")?])?))
        }
        EVAL_OP => {
            let x = table(node, env, 0)?;
            let y = table(node, env, 1)?;
            let mut cfg = EvalConfig::default();
            for (k, v) in &node.kwargs {
                match (k.as_str(), v) {
                    ("metric", Literal::Str(s)) if s == "f1" || s == "accuracy" => cfg.metric = s.clone(),
                    ("test_ratio", v) if v.as_f64().is_some() => cfg.test_ratio = v.as_f64().unwrap_or_default(),
                    ("seed", Literal::Int(s)) if *s >= 0 => cfg.seed = *s as u64,
                    _ => return err("BadParam", format!("{EVAL_OP}: invalid argument {k}={v}")),
                }
            }
            if node.args.len() > 2 {
                return err("BadParam", format!("{EVAL_OP} takes two positional arguments"));
            }
            Ok(Value::Scalar(train_eval(x, y, &cfg)?))
        }
        SLOW_OP => Ok(Value::Table(pairwise_rank(table(node, env, 0)?))),
        name => {
            let Some(op) = lookup(name) else {
                return err("UndefinedOperation", name);
            };
            let d = table(node, env, 0)?;
            let bound = BoundOp::bind(op, &literal_tail(node, 1)?, &node.kwargs)?;
            Ok(Value::Table(apply_physical(&bound, d)?))
        }
    }
}

/// Data paths are relative and may not climb out of the data directory.
fn resolve_data_path(data_dir: &Path, rel: &str) -> Result<PathBuf, NodeError> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return err("PathError", format!("{rel} is not a relative path inside the data directory"));
    }
    Ok(data_dir.join(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metric: String,
    pub test_ratio: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: "f1".into(),
            test_ratio: 0.25,
            seed: 0,
        }
    }
}

/// Ordinal codes for a column: numeric cells as-is, categorical cells by
/// their rank among the sorted distinct values.
fn encode(col: &Column) -> Result<Vec<f64>, NodeError> {
    let missing = || NodeError(format!("UnimputedMissing: column {} has missing values", col.name));
    match &col.data {
        ColumnData::Numeric(v) => v.iter().map(|x| x.ok_or_else(missing)).collect(),
        ColumnData::Categorical(v) => {
            let mut levels: Vec<&str> = v.iter().flatten().map(String::as_str).collect();
            levels.sort_unstable();
            levels.dedup();
            v.iter()
                .map(|x| {
                    let s = x.as_deref().ok_or_else(missing)?;
                    Ok(levels.binary_search(&s).expect("level collected above") as f64)
                })
                .collect()
        }
    }
}

/// Binary labels: the larger of the two sorted distinct values is positive.
fn labels(col: &Column) -> Result<Vec<bool>, NodeError> {
    let codes = encode(col)?;
    let mut distinct = codes.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() != 2 {
        return err("NonBinaryLabel", format!("column {} has {} distinct values", col.name, distinct.len()));
    }
    Ok(codes.iter().map(|&c| c == distinct[1]).collect())
}

/// Fits the fixed logistic model on a seeded split and scores the held-out
/// part.
pub fn train_eval(x: &Dataset, y: &Dataset, cfg: &EvalConfig) -> Result<f64, String> {
    train_eval_inner(x, y, cfg).map_err(|NodeError(m)| m)
}

fn train_eval_inner(x: &Dataset, y: &Dataset, cfg: &EvalConfig) -> Result<f64, NodeError> {
    if y.column_count() != 1 {
        return err("ShapeMismatch", format!("label must be a single column, got {}", y.column_count()));
    }
    if x.row_count() != y.row_count() {
        return err("ShapeMismatch", format!("{} feature rows but {} labels", x.row_count(), y.row_count()));
    }
    let truth = labels(&y.columns()[0])?;
    let cols: Vec<Vec<f64>> = x.columns().iter().map(encode).collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = (0..x.row_count()).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
    let (train, test) = split_indices(x.row_count(), cfg.test_ratio, cfg.seed)?;
    let pick = |idx: &[usize]| matrix(&idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>());
    let (xtr, xte) = if cols.is_empty() {
        (ndarray::Array2::zeros((train.len(), 0)), ndarray::Array2::zeros((test.len(), 0)))
    } else {
        (pick(&train), pick(&test))
    };
    let ytr: ndarray::Array1<f64> = train.iter().map(|&i| if truth[i] { 1.0 } else { 0.0 }).collect();
    let model = LogisticModel::fit(xtr.view(), ytr.view(), GdConfig::CLASSIFIER);
    let pred: Vec<bool> = model.probabilities(xte.view()).iter().map(|&p| p >= 0.5).collect();
    let actual: Vec<bool> = test.iter().map(|&i| truth[i]).collect();
    let m = if cfg.metric == "accuracy" { accuracy(&pred, &actual) } else { f1_score(&pred, &actual) };
    Ok(m)
}

/// Replaces each numeric cell by the number of cells in its column that are
/// strictly smaller, counted pairwise.
pub fn pairwise_rank(d: &Dataset) -> Dataset {
    let cols = d
        .columns()
        .iter()
        .map(|c| match &c.data {
            ColumnData::Numeric(v) => {
                let ranks = v
                    .iter()
                    .map(|x| x.map(|x| v.iter().flatten().filter(|&&o| o < x).count() as f64))
                    .collect();
                Column::numeric(c.name.clone(), ranks)
            }
            ColumnData::Categorical(_) => c.clone(),
        })
        .collect();
    Dataset::with_rows(d.name.clone(), cols, d.row_count()).expect("shape unchanged")
}

/// Persists computed table results the cost model deems worth keeping.
/// `seen` counts how often each trace hash was produced by earlier versions.
/// Returns the number of new entries.
pub fn materialize(
    g: &PipelineGraph,
    result: &ExecResult,
    store: &mut CacheStore,
    model: &CostModel,
    version: u64,
    seen: &HashMap<u64, u64>,
) -> Result<usize, CacheError> {
    let metric = result.metric.unwrap_or(0.0);
    let mut added = 0;
    for r in &result.node_reports {
        if r.loaded {
            store.record_hit(r.trace_hash)?;
            continue;
        }
        if store.get(r.trace_hash).is_some() {
            continue;
        }
        let Some(node) = g.node(r.node_id) else { continue };
        let Some(Value::Table(d)) = result.env.get(&node.output) else { continue };
        if d.column_count() == 0 {
            continue;
        }
        let f = CacheFeatures {
            bytes: r.bytes,
            micros: r.micros,
            depth: g.depth(r.node_id),
            reuse_count: seen.get(&r.trace_hash).copied().unwrap_or(0),
            metric,
        };
        if let Materialize::Keep { score, evict } = decide_materialize(&f, model, store) {
            for h in evict {
                store.remove(h)?;
            }
            store.insert(r.trace_hash, d, r.micros, version, score)?;
            added += 1;
        }
    }
    Ok(added)
}
