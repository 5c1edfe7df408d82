//! Fully connected Q-network: LeakyReLU hidden layers, tanh output, manual
//! backprop and Adam.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::RecommenderError;
use crate::rng::SeededRng;

pub const LEAKY_SLOPE: f64 = 0.01;
/// Score given to masked actions; below the tanh range so it never wins.
pub const MASKED_SCORE: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Gradients with the same layout as the network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl QNetwork {
    /// Glorot-uniform weights from `SeededRng(seed)`, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| rng.uniform(-a, a)));
            biases.push(Array1::zeros(w[1]));
        }
        Self { weights, biases }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            weights: sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: sizes.windows(2).map(|w| Array1::zeros(w[1])).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.weights.iter().map(|w| w.nrows()).collect();
        s.extend(self.weights.last().map(|w| w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    /// Pre-activations and activations of every layer for a batch (rows).
    fn forward_trace(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = act[l].dot(w) + b;
            let a = if l == last { z.mapv(f64::tanh) } else { z.mapv(leaky) };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_trace(x).1.pop().expect("at least one layer")
    }

    pub fn forward(&self, s: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, s.len()), s.to_vec()).expect("row vector");
        self.forward_batch(&x).row(0).to_vec()
    }

    /// Half mean squared TD error on the chosen actions and its gradient.
    pub fn loss_and_grad(&self, x: &Array2<f64>, actions: &[usize], targets: &[f64]) -> (f64, Grads) {
        let (pre, act) = self.forward_trace(x);
        let n = x.nrows() as f64;
        let out = act.last().expect("output layer");
        let mut delta = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let q = out[[i, a]];
            loss += 0.5 * (q - y) * (q - y) / n;
            delta[[i, a]] = (q - y) / n * (1.0 - q * q);
        }
        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = act[l].t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let back = delta.dot(&self.weights[l].t());
                delta = back * pre[l - 1].mapv(leaky_grad);
            }
        }
        (loss, Grads { weights: gw, biases: gb })
    }

    pub fn loss(&self, x: &Array2<f64>, actions: &[usize], targets: &[f64]) -> f64 {
        let out = self.forward_batch(x);
        let n = x.nrows() as f64;
        actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&a, &y))| 0.5 * (out[[i, a]] - y).powi(2) / n)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat little-endian f32: each layer's weights (row-major, input by
    /// output) followed by its biases.
    pub fn write_weights<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (m, b) in self.weights.iter().zip(&self.biases) {
            for v in m.iter().chain(b.iter()) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_weights<R: Read>(sizes: &[usize], mut r: R) -> Result<Self, RecommenderError> {
        let mut net = Self::zeros(sizes);
        let mut buf = [0u8; 4];
        for (m, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            for v in m.iter_mut().chain(b.iter_mut()) {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf) as f64;
            }
        }
        if r.read(&mut buf)? != 0 {
            return Err(RecommenderError::Model("weight file longer than its shapes".into()));
        }
        Ok(net)
    }
}

/// Q-values with masked actions forced to [`MASKED_SCORE`].
pub fn q_values(net: &QNetwork, s: &[f64], mask: &[bool]) -> Result<Vec<f64>, RecommenderError> {
    if s.len() != net.input_dim() || mask.len() != net.output_dim() {
        return Err(RecommenderError::DimensionMismatch(format!(
            "network {:?} got state {} and mask {}",
            net.sizes(),
            s.len(),
            mask.len()
        )));
    }
    let q = net.forward(s);
    Ok(q.iter().zip(mask).map(|(&v, &ok)| if ok { v } else { MASKED_SCORE }).collect())
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        let zero = Grads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zero.clone(),
            v: zero,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, g: &Grads) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..net.weights.len() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut net.biases[l])
                .and(&g.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// JSON sidecar describing a saved weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub layers: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub dtype: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

pub fn save_model(net: &QNetwork, path: &Path, seed: u64, config: serde_json::Value) -> Result<(), RecommenderError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    net.write_weights(&mut bytes)?;
    std::fs::write(path, bytes)?;
    let meta = ModelMeta {
        layers: net.sizes(),
        hidden_activation: format!("leaky_relu({LEAKY_SLOPE})"),
        output_activation: "tanh".into(),
        dtype: "f32le".into(),
        seed,
        config,
    };
    std::fs::write(sidecar(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<QNetwork, RecommenderError> {
    let meta: ModelMeta = serde_json::from_slice(&std::fs::read(sidecar(path))?)?;
    let file = std::fs::File::open(path)?;
    QNetwork::read_weights(&meta.layers, std::io::BufReader::new(file))
}

pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
