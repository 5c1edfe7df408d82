//! Deterministic logistic regression by full-batch gradient descent. Used as
//! the downstream classifier and as the cache cost model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub lr: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Rescale the joint (weights, bias) gradient to this L2 norm when larger.
    pub clip_norm: Option<f64>,
}

impl GdConfig {
    pub const CLASSIFIER: GdConfig = GdConfig {
        lr: 0.05,
        iterations: 300,
        l2: 1e-3,
        clip_norm: Some(10.0),
    };
    pub const COST_MODEL: GdConfig = GdConfig {
        lr: 0.1,
        iterations: 500,
        l2: 1e-4,
        clip_norm: None,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Array1::zeros(dim),
            bias: 0.0,
        }
    }

    pub fn probability(&self, row: ArrayView1<f64>) -> f64 {
        sigmoid(row.dot(&self.weights) + self.bias)
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array1<f64> {
        (x.dot(&self.weights) + self.bias).mapv(sigmoid)
    }

    /// Zero-initialised fit minimising mean log-loss + l2/2 * |w|^2. The bias
    /// is not regularised.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: GdConfig) -> Self {
        let (n, dim) = x.dim();
        let mut m = Self::zeros(dim);
        if n == 0 {
            return m;
        }
        let inv_n = 1.0 / n as f64;
        for _ in 0..cfg.iterations {
            let resid = m.probabilities(x) - y;
            let mut gw = x.t().dot(&resid) * inv_n + &m.weights * cfg.l2;
            let mut gb = resid.sum() * inv_n;
            if let Some(clip) = cfg.clip_norm {
                let norm = (gw.dot(&gw) + gb * gb).sqrt();
                if norm > clip {
                    let s = clip / norm;
                    gw *= s;
                    gb *= s;
                }
            }
            m.weights.scaled_add(-cfg.lr, &gw);
            m.bias -= cfg.lr * gb;
        }
        m
    }
}

/// Row-major feature matrix from per-row vectors.
pub fn matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat).expect("rows share one width")
}

/// F1 of the positive class; 0 when nothing is predicted positive.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp + fp == 0 || tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fne) as f64
}

pub fn accuracy(pred: &[bool], truth: &[bool]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64
}
