//! Per-column summary statistics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, ColumnData};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ColumnStats {
    pub missing_ratio: f64,
    pub zero_ratio: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub distinct_ratio: f64,
    pub outlier_ratio: f64,
}

/// Quantile of an ascending slice with linear interpolation between the
/// closest ranks (position `p * (n - 1)`). Returns 0 for an empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(values), 0.5)
}

/// Moments are taken over non-missing values with population variance.
/// Categorical columns only report the missing and distinct ratios.
pub fn column_stats(col: &Column) -> ColumnStats {
    let n = col.len();
    if n == 0 {
        return ColumnStats::default();
    }
    let missing = col.missing_count();
    let missing_ratio = missing as f64 / n as f64;
    let present = n - missing;
    if present == 0 {
        return ColumnStats {
            missing_ratio,
            ..ColumnStats::default()
        };
    }
    let values = match &col.data {
        ColumnData::Numeric(v) => v.iter().flatten().copied().collect::<Vec<f64>>(),
        ColumnData::Categorical(v) => {
            let distinct: HashSet<&str> = v.iter().flatten().map(String::as_str).collect();
            return ColumnStats {
                missing_ratio,
                distinct_ratio: distinct.len() as f64 / present as f64,
                ..ColumnStats::default()
            };
        }
    };
    let m = present as f64;
    let mean = mean(&values);
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    let std = m2.sqrt();
    let (skewness, kurtosis, outlier_ratio) = if std > 0.0 {
        let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / m;
        let m4 = values.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
        let outliers = values.iter().filter(|x| ((*x - mean) / std).abs() > 3.0).count();
        (m3 / std.powi(3), m4 / (m2 * m2) - 3.0, outliers as f64 / m)
    } else {
        (0.0, 0.0, 0.0)
    };
    let sorted = sorted_copy(&values);
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[0] != w[1] {
            distinct += 1;
        }
    }
    ColumnStats {
        missing_ratio,
        zero_ratio: values.iter().filter(|x| **x == 0.0).count() as f64 / m,
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        skewness,
        kurtosis,
        distinct_ratio: distinct as f64 / m,
        outlier_ratio,
    }
}
