//! Materialization decisions and reuse planning for intermediate datasets.

mod plan;
mod store;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::linear::{sigmoid, GdConfig, LogisticModel};
use crate::script::PipelineGraph;

pub use plan::{plan_cost, plan_dag, Assignment, CachePlan, NodeCost};
pub use store::{hash_hex, CacheEntry, CacheStore, CachedColumn};

pub const DEFAULT_BUDGET_BYTES: u64 = 256 * 1024 * 1024;
/// Disk throughput used to turn stored bytes into a load cost in µs.
pub const LOAD_BYTES_PER_MICRO: f64 = 200.0;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("StorageError: {0}")]
    Io(#[from] std::io::Error),
    #[error("StorageError: {0}")]
    Json(#[from] serde_json::Error),
    #[error("StorageError: {0}")]
    Dataset(#[from] DatasetError),
    #[error("StorageError: no cache entry {0:016x}")]
    Missing(u64),
    #[error("StorageError: cache entry {0:016x} is corrupt")]
    Corrupt(u64),
    #[error("DegenerateLabels: cost-model traces need both labels")]
    DegenerateLabels,
}

/// What is known about one intermediate result when deciding to keep it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheFeatures {
    pub bytes: u64,
    pub micros: u64,
    pub depth: usize,
    pub reuse_count: u64,
    pub metric: f64,
}

impl CacheFeatures {
    pub fn vector(&self) -> [f64; 5] {
        [
            (self.bytes as f64).ln_1p(),
            (self.micros as f64).ln_1p(),
            self.depth as f64,
            self.reuse_count as f64,
            self.metric,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub weights: [f64; 5],
    pub bias: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            weights: [-0.2, 0.8, 0.1, 0.5, 0.3],
            bias: -0.5,
        }
    }
}

impl CostModel {
    pub fn score(&self, f: &CacheFeatures) -> f64 {
        let z: f64 = self.weights.iter().zip(f.vector()).map(|(w, x)| w * x).sum();
        sigmoid(z + self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Materialize {
    Skip,
    Keep { score: f64, evict: Vec<u64> },
}

/// Keep a result when the model scores it above one half and it fits the
/// budget, possibly after evicting less valuable entries.
pub fn decide_materialize(f: &CacheFeatures, model: &CostModel, store: &CacheStore) -> Materialize {
    let score = model.score(f);
    if score <= 0.5 {
        return Materialize::Skip;
    }
    match store.eviction_for(f.bytes, score) {
        Some(evict) => Materialize::Keep { score, evict },
        None => Materialize::Skip,
    }
}

/// Logistic fit over logged (features, reused-later) pairs.
pub fn fit_cost_model(traces: &[(CacheFeatures, bool)]) -> Result<CostModel, CacheError> {
    let positives = traces.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == traces.len() {
        return Err(CacheError::DegenerateLabels);
    }
    let flat: Vec<f64> = traces.iter().flat_map(|(f, _)| f.vector()).collect();
    let x = Array2::from_shape_vec((traces.len(), 5), flat).expect("five features per trace");
    let y: Array1<f64> = traces.iter().map(|(_, l)| if *l { 1.0 } else { 0.0 }).collect();
    let m = LogisticModel::fit(x.view(), y.view(), GdConfig::COST_MODEL);
    let mut weights = [0.0; 5];
    weights.iter_mut().zip(m.weights.iter()).for_each(|(w, v)| *w = *v);
    Ok(CostModel { weights, bias: m.bias })
}

/// Load cost of a stored payload in µs.
pub fn load_cost(bytes: u64) -> f64 {
    bytes as f64 / LOAD_BYTES_PER_MICRO
}

/// Plans a graph against a store. `compute` holds one estimated cost per node
/// (missing entries count as 1 µs); the targets are the graph's sinks. Scalar-producing nodes are never cached,
/// so they always have an infinite load cost.
pub fn plan(g: &PipelineGraph, store: &CacheStore, compute: &[f64]) -> CachePlan {
    let parents: Vec<Vec<usize>> = g.nodes().iter().map(|n| g.parents(n.id).iter().map(|p| p - 1).collect()).collect();
    let costs: Vec<NodeCost> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| NodeCost {
            load: g.node_trace(n.id).and_then(|h| store.get(h)).map(|e| load_cost(e.storage_bytes)),
            compute: compute.get(i).copied().unwrap_or(1.0),
        })
        .collect();
    let mut targets = vec![false; g.len()];
    for s in g.sinks() {
        targets[s - 1] = true;
    }
    plan_dag(&parents, &costs, &targets)
}
