use std::collections::{BTreeMap, HashSet};

use super::{BoundOp, OpError};
use crate::dataset::{Column, ColumnData, ColumnKind, Dataset};
use crate::script::Literal;
use crate::stats::{mean, quantile_sorted, sorted_copy, variance};

type Cells = Vec<Option<f64>>;

/// Applies a bound operation, returning a new dataset. Numeric operations
/// leave categorical columns untouched.
pub fn apply_physical(op: &BoundOp, d: &Dataset) -> Result<Dataset, OpError> {
    let targets = target_columns(op, d)?;
    let numeric: Vec<usize> = targets
        .iter()
        .copied()
        .filter(|&i| d.columns()[i].kind() == ColumnKind::Numeric)
        .collect();
    let name = op.op.name;
    let out = match name {
        "mean_impute" => map_numeric(d, &numeric, name, |v| {
            let m = mean(&present(v));
            v.iter().map(|c| Some(c.unwrap_or(m))).collect()
        }),
        "median_impute" => map_numeric(d, &numeric, name, |v| {
            let m = quantile_sorted(&sorted_copy(&present(v)), 0.5);
            v.iter().map(|c| Some(c.unwrap_or(m))).collect()
        }),
        "mode_impute" => mode_impute(d, &targets),
        "const_impute" => const_impute(op, d, &targets),
        "replace_value" => {
            let value = op.number("value")?;
            let stat = op.value("stat").and_then(Literal::as_str).unwrap_or("median");
            if !matches!(stat, "median" | "mean") {
                return Err(OpError::BadParam(format!("replace_value: unknown stat '{stat}'")));
            }
            map_numeric(d, &numeric, name, |v| {
                let kept: Vec<f64> = v.iter().flatten().copied().filter(|x| *x != value).collect();
                let repl = if kept.is_empty() {
                    None
                } else if stat == "median" {
                    Some(quantile_sorted(&sorted_copy(&kept), 0.5))
                } else {
                    Some(mean(&kept))
                };
                v.iter()
                    .map(|c| match c {
                        Some(x) if *x == value => repl,
                        other => *other,
                    })
                    .collect()
            })
        }
        "iqr_clip" => {
            let k = op.number("k")?;
            if k < 0.0 {
                return Err(OpError::BadParam("iqr_clip: k must be non-negative".into()));
            }
            map_numeric(d, &numeric, name, |v| {
                let s = sorted_copy(&present(v));
                let (q1, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
                let iqr = q3 - q1;
                clamp_cells(v, q1 - k * iqr, q3 + k * iqr)
            })
        }
        "zscore_clip" => {
            let z = op.number("z")?;
            if z <= 0.0 {
                return Err(OpError::BadParam("zscore_clip: z must be positive".into()));
            }
            map_numeric(d, &numeric, name, |v| {
                let p = present(v);
                let (m, sd) = (mean(&p), variance(&p).sqrt());
                clamp_cells(v, m - z * sd, m + z * sd)
            })
        }
        "min_max_scale" => map_numeric(d, &numeric, name, |v| {
            let p = present(v);
            let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scale_cells(v, lo, hi - lo)
        }),
        "standard_scale" => map_numeric(d, &numeric, name, |v| {
            let p = present(v);
            scale_cells(v, mean(&p), variance(&p).sqrt())
        }),
        "max_abs_scale" => map_numeric(d, &numeric, name, |v| {
            let m = present(v).iter().fold(0.0f64, |a, x| a.max(x.abs()));
            scale_cells(v, 0.0, m)
        }),
        "robust_scale" => map_numeric(d, &numeric, name, |v| {
            let s = sorted_copy(&present(v));
            let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
            scale_cells(v, quantile_sorted(&s, 0.5), iqr)
        }),
        "equal_width_bins" => {
            let k = bin_count(op)?;
            map_numeric(d, &numeric, name, |v| {
                let p = present(v);
                let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let width = (hi - lo) / k as f64;
                v.iter()
                    .map(|c| {
                        c.map(|x| {
                            if width > 0.0 {
                                (((x - lo) / width).floor() as usize).min(k - 1) as f64
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect()
            })
        }
        "quantile_bins" => {
            let k = bin_count(op)?;
            map_numeric(d, &numeric, name, |v| {
                let s = sorted_copy(&present(v));
                let edges: Vec<f64> = (1..k).map(|i| quantile_sorted(&s, i as f64 / k as f64)).collect();
                v.iter()
                    .map(|c| c.map(|x| edges.iter().filter(|e| **e < x).count() as f64))
                    .collect()
            })
        }
        "custom_bins" => custom_bins(op, d, &numeric),
        "poly_features" => {
            let degree = op.number("degree")?;
            if degree != 2.0 {
                return Err(OpError::BadParam(format!(
                    "poly_features: only degree 2 is supported, got {degree}"
                )));
            }
            generate(d, &numeric, true)
        }
        "interactions_only" => generate(d, &numeric, false),
        "variance_threshold" => {
            let t = op.number("threshold")?;
            if t < 0.0 {
                return Err(OpError::BadParam("variance_threshold: threshold must be non-negative".into()));
            }
            let drop: HashSet<usize> = numeric
                .iter()
                .copied()
                .filter(|&i| variance(&d.columns()[i].present_values()) <= t)
                .collect();
            select(d, &drop, name)
        }
        "correlation_filter" => {
            let t = op.number("threshold")?;
            if !(t > 0.0 && t <= 1.0) {
                return Err(OpError::BadParam("correlation_filter: threshold must be in (0, 1]".into()));
            }
            let mut drop = HashSet::new();
            for (a, &i) in numeric.iter().enumerate() {
                if drop.contains(&i) {
                    continue;
                }
                for &j in &numeric[a + 1..] {
                    if drop.contains(&j) {
                        continue;
                    }
                    if pearson(&d.columns()[i], &d.columns()[j]).abs() >= t {
                        drop.insert(j);
                    }
                }
            }
            select(d, &drop, name)
        }
        other => unreachable!("operation {other} has no implementation"),
    }?;
    check_finite(&out, name)?;
    Ok(out)
}

fn target_columns(op: &BoundOp, d: &Dataset) -> Result<Vec<usize>, OpError> {
    match &op.columns {
        None => Ok((0..d.column_count()).collect()),
        Some(names) => names
            .iter()
            .map(|n| {
                d.columns()
                    .iter()
                    .position(|c| &c.name == n)
                    .ok_or_else(|| OpError::UnknownColumn(format!("{}: no column '{n}'", op.op.name)))
            })
            .collect(),
    }
}

fn present(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn clamp_cells(v: &[Option<f64>], lo: f64, hi: f64) -> Cells {
    v.iter().map(|c| c.map(|x| x.clamp(lo, hi))).collect()
}

/// `(x - center) / spread`, with every cell mapped to 0 when spread is 0.
fn scale_cells(v: &[Option<f64>], center: f64, spread: f64) -> Cells {
    v.iter()
        .map(|c| c.map(|x| if spread > 0.0 { (x - center) / spread } else { 0.0 }))
        .collect()
}

fn map_numeric(
    d: &Dataset,
    targets: &[usize],
    op: &str,
    f: impl Fn(&[Option<f64>]) -> Cells,
) -> Result<Dataset, OpError> {
    let mut cols = d.columns().to_vec();
    for &i in targets {
        let new = match &cols[i].data {
            ColumnData::Numeric(v) => f(v),
            ColumnData::Categorical(_) => continue,
        };
        cols[i] = finite_column(&cols[i].name, new, op)?;
    }
    rebuild(d, cols)
}

fn finite_column(name: &str, cells: Cells, op: &str) -> Result<Column, OpError> {
    if cells.iter().flatten().any(|x| !x.is_finite()) {
        return Err(OpError::Overflow(format!("{op} produced non-finite values in column {name}")));
    }
    Ok(Column::numeric(name, cells))
}

fn rebuild(d: &Dataset, cols: Vec<Column>) -> Result<Dataset, OpError> {
    Dataset::with_rows(d.name.clone(), cols, d.row_count()).map_err(|e| OpError::BadParam(e.to_string()))
}

fn check_finite(d: &Dataset, op: &str) -> Result<(), OpError> {
    for c in d.columns() {
        if c.present_values().iter().any(|x| !x.is_finite()) {
            return Err(OpError::Overflow(format!("{op} produced non-finite values in column {}", c.name)));
        }
    }
    Ok(())
}

fn mode_impute(d: &Dataset, targets: &[usize]) -> Result<Dataset, OpError> {
    let mut cols = d.columns().to_vec();
    for &i in targets {
        cols[i] = match &cols[i].data {
            ColumnData::Numeric(v) => {
                // Most frequent value; ties go to the smallest.
                let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
                for x in v.iter().flatten() {
                    let key = if *x == 0.0 { 0.0f64 } else { *x };
                    counts.entry(key.to_bits()).or_insert((key, 0)).1 += 1;
                }
                let mode = counts
                    .values()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
                    .map_or(0.0, |e| e.0);
                Column::numeric(&cols[i].name, v.iter().map(|c| Some(c.unwrap_or(mode))).collect())
            }
            ColumnData::Categorical(v) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for s in v.iter().flatten() {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
                let mode = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(s, _)| s.to_string());
                Column::categorical(&cols[i].name, v.iter().map(|c| c.clone().or_else(|| mode.clone())).collect())
            }
        };
    }
    rebuild(d, cols)
}

fn const_impute(op: &BoundOp, d: &Dataset, targets: &[usize]) -> Result<Dataset, OpError> {
    let value = op.number("value")?;
    let numeric: Vec<usize> = targets
        .iter()
        .copied()
        .filter(|&i| d.columns()[i].kind() == ColumnKind::Numeric)
        .collect();
    map_numeric(d, &numeric, op.op.name, |v| v.iter().map(|c| Some(c.unwrap_or(value))).collect())
}

fn bin_count(op: &BoundOp) -> Result<usize, OpError> {
    let k = op.number("k")?;
    if k < 1.0 || k.fract() != 0.0 || k > 1e6 {
        return Err(OpError::BadParam(format!("{}: k must be a positive integer", op.op.name)));
    }
    Ok(k as usize)
}

/// Right-closed bins `(e[i], e[i+1]]`; values outside the edges go to the
/// end bins.
fn custom_bins(op: &BoundOp, d: &Dataset, targets: &[usize]) -> Result<Dataset, OpError> {
    let edges: Vec<f64> = op
        .value("edges")
        .and_then(Literal::as_list)
        .map(|l| l.iter().filter_map(Literal::as_f64).collect())
        .unwrap_or_default();
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(OpError::BadParam(
            "custom_bins: edges must be at least two strictly increasing numbers".into(),
        ));
    }
    let labels: Option<Vec<String>> = op
        .value("labels")
        .and_then(Literal::as_list)
        .map(|l| l.iter().filter_map(|x| x.as_str().map(str::to_string)).collect());
    let nbins = edges.len() - 1;
    if let Some(l) = &labels {
        if l.len() != nbins {
            return Err(OpError::BadParam(format!(
                "custom_bins: {} edges need {} labels, got {}",
                edges.len(),
                nbins,
                l.len()
            )));
        }
    }
    let bin_of = |x: f64| -> usize {
        let inner = &edges[1..edges.len() - 1];
        inner.iter().filter(|e| x > **e).count()
    };
    let mut cols = d.columns().to_vec();
    for &i in targets {
        let ColumnData::Numeric(v) = &cols[i].data else { continue };
        cols[i] = match &labels {
            Some(l) => Column::categorical(&cols[i].name, v.iter().map(|c| c.map(|x| l[bin_of(x)].clone())).collect()),
            None => Column::numeric(&cols[i].name, v.iter().map(|c| c.map(|x| bin_of(x) as f64)).collect()),
        };
    }
    rebuild(d, cols)
}

fn unique_name(taken: &mut HashSet<String>, want: String) -> String {
    let mut name = want;
    while taken.contains(&name) {
        name.push('\'');
    }
    taken.insert(name.clone());
    name
}

/// Appends squares (when `squares`) and then pairwise products in column order.
fn generate(d: &Dataset, targets: &[usize], squares: bool) -> Result<Dataset, OpError> {
    let mut cols = d.columns().to_vec();
    let mut taken: HashSet<String> = cols.iter().map(|c| c.name.clone()).collect();
    let num = |i: usize| d.columns()[i].as_numeric().expect("targets are numeric");
    let product = |a: &[Option<f64>], b: &[Option<f64>]| -> Cells {
        a.iter().zip(b).map(|(x, y)| Some((*x)? * (*y)?)).collect()
    };
    if squares {
        for &i in targets {
            let name = unique_name(&mut taken, format!("{}^2", d.columns()[i].name));
            cols.push(finite_column(&name, product(num(i), num(i)), "poly_features")?);
        }
    }
    for (a, &i) in targets.iter().enumerate() {
        for &j in &targets[a + 1..] {
            let name = unique_name(&mut taken, format!("{}*{}", d.columns()[i].name, d.columns()[j].name));
            cols.push(finite_column(&name, product(num(i), num(j)), "poly_features")?);
        }
    }
    rebuild(d, cols)
}

fn select(d: &Dataset, drop: &HashSet<usize>, op: &str) -> Result<Dataset, OpError> {
    let cols: Vec<Column> = d
        .columns()
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    if cols.is_empty() && d.column_count() > 0 {
        return Err(OpError::EmptyResult(format!("{op} removed every feature column")));
    }
    rebuild(d, cols)
}

/// Pearson correlation over rows where both cells are present; 0 when either
/// side is constant.
fn pearson(a: &Column, b: &Column) -> f64 {
    let (Some(a), Some(b)) = (a.as_numeric(), b.as_numeric()) else { return 0.0 };
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}
