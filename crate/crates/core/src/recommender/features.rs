//! State featurization: per-column statistics for the dataset and a fixed
//! recurrent fold over statement embeddings for the pipeline.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use regex::Regex;

use crate::dataset::Dataset;
use crate::hash::fnv1a;
use crate::ops::lookup;
use crate::rng::SeededRng;
use crate::script::{PipelineGraph, EVAL_OP};
use crate::stats::{column_stats, ColumnStats};

pub const MAX_COLUMNS: usize = 32;
pub const STATS_PER_COLUMN: usize = 12;
pub const PSI_DIM: usize = MAX_COLUMNS * STATS_PER_COLUMN;
pub const UPSILON_DIM: usize = 64;
pub const STATE_DIM: usize = PSI_DIM + UPSILON_DIM;
const TOKEN_BUCKETS: usize = 32;
const VERTEX_DIM: usize = TOKEN_BUCKETS + 8;
const FOLD_SEED: u64 = 0xC0DE;

fn slog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// The featurized fields, in slot order. Ratios pass through; moments and
/// order statistics are squashed with a signed log.
fn column_features(s: &ColumnStats) -> [f64; STATS_PER_COLUMN] {
    [
        s.missing_ratio,
        s.zero_ratio,
        slog(s.mean),
        slog(s.std),
        slog(s.min),
        slog(s.q25),
        slog(s.q75),
        slog(s.max),
        slog(s.skewness),
        slog(s.kurtosis),
        s.distinct_ratio,
        s.outlier_ratio,
    ]
}

pub fn featurize_dataset(d: &Dataset) -> Vec<f64> {
    let mut psi = vec![0.0; PSI_DIM];
    for (slot, col) in psi.chunks_mut(STATS_PER_COLUMN).zip(d.columns().iter().take(MAX_COLUMNS)) {
        slot.copy_from_slice(&column_features(&column_stats(col)));
    }
    psi
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"[A-Za-z_][A-Za-z0-9_]*|-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|"(?:[^"\\]|\\.)*"|\S"#).expect("valid regex")
    })
}

/// Token-hash bag of a statement plus a one-hot over its operation class.
fn vertex(text: &str, op_name: &str) -> Array1<f64> {
    let mut x: Array1<f64> = Array1::zeros(VERTEX_DIM);
    for tok in token_re().find_iter(text) {
        x[(fnv1a(tok.as_str().as_bytes()) % TOKEN_BUCKETS as u64) as usize] += 1.0;
    }
    let norm = x.dot(&x).sqrt();
    if norm > 0.0 {
        x.mapv_inplace(|v| v / norm);
    }
    let class = if op_name == EVAL_OP {
        7
    } else {
        lookup(op_name).map_or(6, |op| op.family.index())
    };
    x[TOKEN_BUCKETS + class] = 1.0;
    x
}

fn fold_weights() -> &'static (Array2<f64>, Array2<f64>) {
    static W: OnceLock<(Array2<f64>, Array2<f64>)> = OnceLock::new();
    W.get_or_init(|| {
        let mut rng = SeededRng::new(FOLD_SEED);
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.uniform(-1.0, 1.0) * 0.1);
        let wh = draw(UPSILON_DIM, UPSILON_DIM);
        let wx = draw(UPSILON_DIM, VERTEX_DIM);
        (wh, wx)
    })
}

/// h <- tanh(W_h h + W_x x) over the statements in program order.
pub fn featurize_pipeline(g: &PipelineGraph) -> Vec<f64> {
    let (wh, wx) = fold_weights();
    let mut h = Array1::zeros(UPSILON_DIM);
    for n in g.nodes() {
        let text = g.statement_text(n.id).unwrap_or_default();
        let x = vertex(&text, &n.op_name);
        h = (wh.dot(&h) + wx.dot(&x)).mapv(f64::tanh);
    }
    h.to_vec()
}

/// s = concat(psi, upsilon).
pub fn state(d: &Dataset, g: &PipelineGraph) -> Vec<f64> {
    let mut s = featurize_dataset(d);
    s.extend(featurize_pipeline(g));
    s
}
