//! Episodes over (dataset, program) pairs and two-level DQN training.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::{state, STATE_DIM};
use super::qnet::{argmax, q_values, Adam, QNetwork};
use super::{layer_sizes, logical_mask, physical_actions, physical_mask, RecommenderError, TrainConfig, LOGICAL_ACTIONS};
use crate::dataset::Dataset;
use crate::exec::{execute, ExecContext, Value};
use crate::ops::{catalog, BoundOp, Family};
use crate::rng::SeededRng;
use crate::script::{insert_node, parse, PipelineGraph, ScriptSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub label: String,
}

/// One line of a corpus manifest; `file` is relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub file: String,
    pub label: String,
}

pub fn load_manifest(path: &Path) -> Result<Vec<CorpusEntry>, RecommenderError> {
    let items: Vec<ManifestItem> = serde_json::from_slice(&std::fs::read(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(items
        .into_iter()
        .map(|i| CorpusEntry {
            path: dir.join(i.file),
            label: i.label,
        })
        .collect())
}

/// Feature variable that inserted operations rewrite.
const FEATURES: &str = "X";

pub fn baseline_program(file: &str, label: &str) -> String {
    format!(
        "df = load_csv({file:?})\n{FEATURES} = drop_column(df, {label:?})\ny = get_column(df, {label:?})\nscore = train_eval({FEATURES}, y, metric=\"f1\", test_ratio=0.25, seed=0)"
    )
}

/// One dataset with the program being built for it.
#[derive(Debug, Clone)]
pub struct PrepEnv {
    data_dir: PathBuf,
    pub graph: PipelineGraph,
    pub used: [bool; LOGICAL_ACTIONS],
    pub metric: f64,
    features: Dataset,
}

impl PrepEnv {
    pub fn reset(entry: &CorpusEntry) -> Result<Self, RecommenderError> {
        let file = entry
            .path
            .file_name()
            .and_then(|f| f.to_str())
            .ok_or_else(|| RecommenderError::Model(format!("bad dataset path {}", entry.path.display())))?;
        let data_dir = entry.path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let graph = parse(&ScriptSource::new(baseline_program(file, &entry.label)))
            .map_err(|e| RecommenderError::Model(e.to_string()))?;
        let mut env = Self {
            data_dir,
            graph,
            used: [false; LOGICAL_ACTIONS],
            metric: 0.0,
            features: Dataset::new("empty", vec![]).expect("empty dataset"),
        };
        env.run().ok_or_else(|| RecommenderError::Model(format!("cannot load {}", entry.path.display())))?;
        Ok(env)
    }

    /// Executes the current program, updating metric and features. `None` if
    /// the feature table could not be produced at all.
    fn run(&mut self) -> Option<()> {
        let r = execute(&self.graph, &ExecContext::new(&self.data_dir));
        let eval = self.graph.eval_nodes().next()?;
        let x = eval.inputs.first()?;
        match r.env.get(x) {
            Some(Value::Table(d)) => self.features = d.clone(),
            _ => return None,
        }
        self.metric = r.metric.unwrap_or(0.0);
        Some(())
    }

    pub fn state(&self) -> Vec<f64> {
        state(&self.features, &self.graph)
    }

    pub fn done(&self) -> bool {
        self.used.iter().all(|&u| u)
    }

    pub fn logical_mask(&self) -> Vec<bool> {
        logical_mask(&self.used)
    }

    pub fn physical_mask(&self, family: Family) -> Vec<bool> {
        physical_mask(|f| f == family)
    }

    /// Ops still reachable after this step: those in unused families.
    pub fn next_physical_mask(&self) -> Vec<bool> {
        physical_mask(|f| !self.used[f.index()])
    }

    /// Inserts the op on the feature variable and re-executes. If the op
    /// itself fails the insertion is undone; the family counts as used either
    /// way. Returns the reward.
    pub fn step(&mut self, family: Family, op_index: usize) -> f64 {
        self.used[family.index()] = true;
        let op = &catalog()[op_index];
        let call = BoundOp::with_defaults(op).expect("auto-applicable op").to_call();
        let Ok(next) = insert_node(&self.graph, &call, FEATURES) else {
            return 0.0;
        };
        let prev = std::mem::replace(&mut self.graph, next);
        let inserted = self.graph.eval_nodes().next().map_or(0, |n| n.id - 1);
        let r = execute(&self.graph, &ExecContext::new(&self.data_dir));
        if !r.node_reports.iter().any(|n| n.node_id == inserted) {
            self.graph = prev;
            let _ = self.run();
            return 0.0;
        }
        if let Some(Value::Table(d)) = self.graph.eval_nodes().next().and_then(|e| e.inputs.first()).and_then(|x| r.env.get(x)) {
            self.features = d.clone();
        }
        self.metric = r.metric.unwrap_or(0.0);
        self.metric
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub next_mask: Vec<bool>,
    pub done: bool,
}

/// Ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<'a>(&'a self, n: usize, rng: &mut SeededRng) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.below(self.items.len())]).collect()
    }
}

/// Online network, its frozen target copy, optimizer and replay memory.
struct Learner {
    net: QNetwork,
    target: QNetwork,
    opt: Adam,
    replay: ReplayBuffer,
}

impl Learner {
    fn new(actions: usize, seed: u64, cfg: &TrainConfig) -> Self {
        let net = QNetwork::new(&layer_sizes(actions), seed);
        Self {
            target: net.clone(),
            opt: Adam::new(&net, cfg.lr),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            net,
        }
    }

    /// One minibatch step on r + gamma * max Q_target(s', a') * (1 - done).
    fn update(&mut self, cfg: &TrainConfig, rng: &mut SeededRng) -> Option<f64> {
        if self.replay.len() < cfg.batch {
            return None;
        }
        let batch = self.replay.sample(cfg.batch, rng);
        let mut x = Array2::zeros((batch.len(), STATE_DIM));
        let mut xn = Array2::zeros((batch.len(), STATE_DIM));
        for (i, t) in batch.iter().enumerate() {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s[..]));
            xn.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s_next[..]));
        }
        let qn = self.target.forward_batch(&xn);
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let future = qn.row(i).iter().zip(&t.next_mask).filter(|(_, &m)| m).map(|(&q, _)| q).fold(f64::NEG_INFINITY, f64::max);
                if t.done || !future.is_finite() {
                    t.r
                } else {
                    t.r + cfg.gamma * future
                }
            })
            .collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
        let (loss, g) = self.net.loss_and_grad(&x, &actions, &targets);
        self.opt.step(&mut self.net, &g);
        Some(loss)
    }
}

/// Uniform among unmasked actions with probability `eps`, else greedy.
fn epsilon_greedy(q: &[f64], mask: &[bool], eps: f64, rng: &mut SeededRng) -> usize {
    if rng.next_f64() < eps {
        let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        allowed[rng.below(allowed.len())]
    } else {
        argmax(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub dataset: String,
    pub epsilon: f64,
    pub steps: usize,
    pub final_metric: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub logical: QNetwork,
    pub physical: QNetwork,
    pub log: Vec<EpisodeLog>,
}

/// Two-level DQN training, deterministic for a given `cfg.seed`.
pub fn train(corpus: &[CorpusEntry], cfg: &TrainConfig) -> Result<TrainOutput, RecommenderError> {
    if corpus.is_empty() {
        return Err(RecommenderError::EmptyCorpus);
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut logical = Learner::new(LOGICAL_ACTIONS, cfg.seed ^ 0x4C4F_4749, cfg);
    let mut physical = Learner::new(physical_actions(), cfg.seed ^ 0x5048_5953, cfg);
    let mut steps = 0usize;
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let entry = &corpus[episode % corpus.len()];
        let eps = cfg.epsilon(episode);
        let mut env = PrepEnv::reset(entry)?;
        let mut s = env.state();
        let mut losses = Vec::new();
        let mut n = 0;
        while !env.done() {
            let lmask = env.logical_mask();
            let lq = q_values(&logical.net, &s, &lmask)?;
            let fi = epsilon_greedy(&lq, &lmask, eps, &mut rng);
            let family = Family::ALL[fi];
            let pmask = env.physical_mask(family);
            let pq = q_values(&physical.net, &s, &pmask)?;
            let op = epsilon_greedy(&pq, &pmask, eps, &mut rng);
            let r = env.step(family, op);
            let s_next = env.state();
            let done = env.done();
            logical.replay.push(Transition {
                s: s.clone(),
                a: fi,
                r,
                s_next: s_next.clone(),
                next_mask: env.logical_mask(),
                done,
            });
            physical.replay.push(Transition {
                s,
                a: op,
                r,
                s_next: s_next.clone(),
                next_mask: env.next_physical_mask(),
                done,
            });
            losses.extend(logical.update(cfg, &mut rng));
            losses.extend(physical.update(cfg, &mut rng));
            steps += 1;
            if steps.is_multiple_of(cfg.target_sync_every.max(1)) {
                logical.target = logical.net.clone();
                physical.target = physical.net.clone();
            }
            s = s_next;
            n += 1;
        }
        log.push(EpisodeLog {
            episode,
            dataset: entry.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            epsilon: eps,
            steps: n,
            final_metric: env.metric,
            mean_loss: if losses.is_empty() { 0.0 } else { losses.iter().sum::<f64>() / losses.len() as f64 },
        });
    }
    Ok(TrainOutput {
        logical: logical.net,
        physical: physical.net,
        log,
    })
}

pub enum Policy<'a> {
    Greedy { logical: &'a QNetwork, physical: &'a QNetwork },
    Random(SeededRng),
}

/// Runs one full episode (every family once) and returns the final metric.
pub fn rollout(entry: &CorpusEntry, policy: &mut Policy<'_>) -> Result<f64, RecommenderError> {
    let mut env = PrepEnv::reset(entry)?;
    while !env.done() {
        let lmask = env.logical_mask();
        let (family, op) = match policy {
            Policy::Greedy { logical, physical } => {
                let s = env.state();
                let f = Family::ALL[argmax(&q_values(logical, &s, &lmask)?)];
                let op = argmax(&q_values(physical, &s, &env.physical_mask(f))?);
                (f, op)
            }
            Policy::Random(rng) => {
                let f = Family::ALL[epsilon_greedy(&[], &lmask, 1.0, rng)];
                let op = epsilon_greedy(&[], &env.physical_mask(f), 1.0, rng);
                (f, op)
            }
        };
        env.step(family, op);
    }
    Ok(env.metric)
}
