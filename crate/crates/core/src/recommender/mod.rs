//! Hierarchical DQN recommendation of the next preparation operation.

mod dqn;
mod features;
mod qnet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::Prompt;
use crate::dataset::Dataset;
use crate::ops::{catalog, lookup, prompt_for, BoundOp, Family, PhysicalOperation, PromptSubject};
use crate::script::PipelineGraph;

pub use dqn::{
    baseline_program, load_manifest, rollout, train, CorpusEntry, ManifestItem, EpisodeLog, Policy, PrepEnv, ReplayBuffer, Transition, TrainOutput,
};
pub use features::{featurize_dataset, featurize_pipeline, state, PSI_DIM, STATE_DIM, UPSILON_DIM};
pub use qnet::{argmax, load_model, q_values, save_model, sidecar, Adam, Grads, ModelMeta, QNetwork, MASKED_SCORE};

#[derive(Debug, Error)]
pub enum RecommenderError {
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("AllFamiliesUsed: every operation family is already in the program")]
    AllFamiliesUsed,
    #[error("EmptyCorpus: training needs at least one dataset")]
    EmptyCorpus,
    #[error("ModelError: {0}")]
    Model(String),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("ModelError: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GranularityMode {
    /// Coarse when the physical scores of the best family barely differ.
    #[default]
    Variance,
    /// Families ranked by mean op score; fine when the best op is confident.
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    pub target_sync_every: usize,
    pub seed: u64,
    pub variance_threshold: f64,
    pub confidence_threshold: f64,
    pub granularity: GranularityMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            gamma: 0.9,
            lr: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_fraction: 0.5,
            replay_capacity: 10_000,
            batch: 64,
            target_sync_every: 100,
            seed: 0,
            variance_threshold: 0.01,
            confidence_threshold: 0.5,
            granularity: GranularityMode::Variance,
        }
    }
}

impl TrainConfig {
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay_fraction * self.episodes as f64;
        let frac = if span > 0.0 { (episode as f64 / span).min(1.0) } else { 1.0 };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

pub const LOGICAL_ACTIONS: usize = 6;

pub fn physical_actions() -> usize {
    catalog().len()
}

pub fn layer_sizes(actions: usize) -> [usize; 4] {
    [STATE_DIM, 256, 128, actions]
}

/// Operations that can be applied with no user input. `custom_bins` needs
/// edges from the user, so it is never an automatic action.
pub fn auto_applicable(op: &'static PhysicalOperation) -> bool {
    BoundOp::with_defaults(op).is_ok()
}

/// Families whose operations already appear in the program.
pub fn used_families(g: &PipelineGraph) -> [bool; LOGICAL_ACTIONS] {
    let mut used = [false; LOGICAL_ACTIONS];
    for n in g.nodes() {
        if let Some(op) = lookup(&n.op_name) {
            used[op.family.index()] = true;
        }
    }
    used
}

pub fn logical_mask(used: &[bool; LOGICAL_ACTIONS]) -> Vec<bool> {
    used.iter().map(|u| !u).collect()
}

/// Physical actions allowed inside the given families.
pub fn physical_mask<F: Fn(Family) -> bool>(allowed: F) -> Vec<bool> {
    catalog().iter().map(|op| allowed(op.family) && auto_applicable(op)).collect()
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
}

/// Coarse when the scores are too close to tell the operations apart.
pub fn granularity_by_variance(scores: &[f64], tau: f64) -> Granularity {
    if population_variance(scores) < tau {
        Granularity::Coarse
    } else {
        Granularity::Fine
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecKind {
    Logical,
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: RecKind,
    pub name: String,
    pub family: Family,
    pub score: f64,
    pub prompt: Prompt,
}

/// Ranks the unused families and, for each, recommends either the family or
/// its best operation depending on the granularity rule. Ties keep catalog
/// order.
pub fn recommend(
    d: &Dataset,
    g: &PipelineGraph,
    logical: &QNetwork,
    physical: &QNetwork,
    cfg: &TrainConfig,
) -> Result<Vec<Recommendation>, RecommenderError> {
    let used = used_families(g);
    if used.iter().all(|&u| u) {
        return Err(RecommenderError::AllFamiliesUsed);
    }
    let s = state(d, g);
    let lq = q_values(logical, &s, &logical_mask(&used))?;
    let pq = q_values(physical, &s, &physical_mask(|_| true))?;
    let mut items = Vec::new();
    for f in Family::ALL.into_iter().filter(|f| !used[f.index()]) {
        let ops: Vec<(&'static PhysicalOperation, f64)> =
            catalog().iter().zip(&pq).filter(|(op, _)| op.family == f && auto_applicable(op)).map(|(op, &q)| (op, q)).collect();
        let scores: Vec<f64> = ops.iter().map(|(_, q)| *q).collect();
        let best = ops[argmax(&scores)];
        let (score, grain) = match cfg.granularity {
            GranularityMode::Variance => (lq[f.index()], granularity_by_variance(&scores, cfg.variance_threshold)),
            GranularityMode::Confidence => {
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                let grain = if best.1 > cfg.confidence_threshold { Granularity::Fine } else { Granularity::Coarse };
                (mean, grain)
            }
        };
        items.push(match grain {
            Granularity::Coarse => Recommendation {
                kind: RecKind::Logical,
                name: f.name().to_string(),
                family: f,
                score,
                prompt: prompt_for(PromptSubject::Family(f), None),
            },
            Granularity::Fine => {
                let bound = BoundOp::with_defaults(best.0).expect("auto-applicable");
                Recommendation {
                    kind: RecKind::Physical,
                    name: best.0.name.to_string(),
                    family: f,
                    score,
                    prompt: prompt_for(PromptSubject::Physical(&bound), None),
                }
            }
        });
    }
    // Stable sort keeps catalog order among equal scores.
    items.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(items)
}
