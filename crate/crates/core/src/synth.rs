//! Seeded synthetic classification datasets whose defects specific operation
//! families repair: zero sentinels, unscaled magnitudes, constant columns and
//! missing cells.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset};
use crate::recommender::ManifestItem;
use crate::rng::SeededRng;

pub const LABEL: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defects {
    pub zero_inflated: bool,
    pub unscaled: bool,
    pub constant: bool,
    pub missing: bool,
}

/// Defect mix for the i-th dataset of a suite; cycles through six patterns.
pub fn defects_for(i: usize) -> Defects {
    let d = |zero_inflated, unscaled, constant, missing| Defects {
        zero_inflated,
        unscaled,
        constant,
        missing,
    };
    match i % 6 {
        0 => d(false, true, false, false),
        1 => d(true, false, false, false),
        2 => d(false, false, true, false),
        3 => d(true, true, false, false),
        4 => d(true, false, true, true),
        _ => d(false, true, true, true),
    }
}

pub fn generate(defects: Defects, rows: usize, seed: u64) -> Dataset {
    const INFORMATIVE: usize = 4;
    const NOISE: usize = 2;
    let mut rng = SeededRng::new(seed);
    let beta: Vec<f64> = (0..INFORMATIVE)
        .map(|_| {
            let m = rng.uniform(0.8, 2.0);
            if rng.next_f64() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = (0..INFORMATIVE + NOISE).map(|_| (0..rows).map(|_| rng.normal()).collect()).collect();
    let label: Vec<f64> = (0..rows)
        .map(|r| {
            let logit: f64 = (0..INFORMATIVE).map(|j| beta[j] * z[j][r]).sum::<f64>() + 0.5 * rng.normal();
            if logit > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut cols = Vec::new();
    for (j, zj) in z.iter().enumerate() {
        let (scale, offset) = if defects.unscaled {
            (rng.uniform(200.0, 2000.0), rng.uniform(1000.0, 10000.0))
        } else {
            (rng.uniform(0.5, 3.0), rng.uniform(5.0, 20.0))
        };
        let mut values: Vec<Option<f64>> = zj.iter().map(|v| Some(offset + scale * v)).collect();
        if defects.zero_inflated && j % 2 == 0 {
            for v in values.iter_mut() {
                if rng.next_f64() < 0.25 {
                    *v = Some(0.0);
                }
            }
        }
        if defects.missing && j % 3 == 1 {
            for v in values.iter_mut() {
                if rng.next_f64() < 0.1 {
                    *v = None;
                }
            }
        }
        cols.push(Column::numeric(format!("f{j}"), values));
    }
    if defects.constant {
        cols.push(Column::numeric_dense("const_a", &vec![1000.0; rows]));
        cols.push(Column::numeric_dense("const_b", &vec![-250.0; rows]));
    }
    cols.push(Column::numeric_dense(LABEL, &label));
    Dataset::new(format!("synth_{seed}"), cols).expect("equal-length columns")
}

/// Training suite: 6 datasets, one per defect pattern.
pub fn training_suite() -> Vec<(String, Dataset)> {
    (0..6).map(|i| (format!("train_{i}.csv"), generate(defects_for(i), 300, 100 + i as u64))).collect()
}

/// Held-out suite: 10 datasets with fresh seeds.
pub fn heldout_suite() -> Vec<(String, Dataset)> {
    (0..10).map(|i| (format!("heldout_{i}.csv"), generate(defects_for(i), 300, 1000 + i as u64))).collect()
}

/// Writes each dataset as CSV plus a `{file, label}` manifest.
pub fn write_suite(dir: &Path, suite: &[(String, Dataset)], manifest: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut items = Vec::new();
    for (file, d) in suite {
        std::fs::write(dir.join(file), d.to_csv_string())?;
        items.push(ManifestItem {
            file: file.clone(),
            label: LABEL.to_string(),
        });
    }
    let json = serde_json::to_string_pretty(&items).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(manifest), json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_binary() {
        let a = generate(defects_for(4), 50, 7);
        assert_eq!(a, generate(defects_for(4), 50, 7));
        let y = a.column(LABEL).unwrap().present_values();
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(y.contains(&0.0) && y.contains(&1.0));
        assert!(a.column("f1").unwrap().missing_count() > 0);
        assert!(a.column("const_a").is_some());
    }
}
