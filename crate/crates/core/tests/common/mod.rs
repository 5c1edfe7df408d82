//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use prepline_core::cache::{self, CacheStore, NodeCost};
use prepline_core::dataset::{Column, ColumnData, Dataset};
use prepline_core::ops::{apply_physical, catalog, lookup, BoundOp, Family, OpError};
use prepline_core::script::Arg;
use prepline_core::exec::{execute, ExecContext, ExecResult};
use prepline_core::recommender::QNetwork;
use prepline_core::script::{parse, PipelineGraph, ScriptSource};
use prepline_core::rng::SeededRng;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("repo root")
}

pub fn corpus_programs() -> Vec<(String, String)> {
    let root = repo_root().join("corpus");
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join("programs"))
        .expect("corpus/programs")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ps"))
        .collect();
    files.push(root.join("diabetes_base.ps"));
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect()
}

/// Temp directory holding every CSV the corpus programs load. The diabetes
/// file is the bundled stand-in unless a real copy is provided.
pub fn corpus_data_dir() -> tempfile::TempDir {
    let root = repo_root().join("corpus");
    let dir = tempfile::tempdir().unwrap();
    for sub in ["data", "synth"] {
        for e in std::fs::read_dir(root.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "csv") {
                std::fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
            }
        }
    }
    let (diabetes, _) = diabetes_source();
    std::fs::copy(diabetes, dir.path().join("diabetes.csv")).unwrap();
    dir
}

/// The diabetes CSV to use and a short description of where it came from.
pub fn diabetes_source() -> (PathBuf, &'static str) {
    if let Ok(p) = std::env::var("PREPLINE_DIABETES_CSV") {
        return (PathBuf::from(p), "PREPLINE_DIABETES_CSV");
    }
    let real = repo_root().join("corpus/data/diabetes.csv");
    if real.exists() {
        return (real, "corpus/data/diabetes.csv");
    }
    (repo_root().join("corpus/data/pima_mass.csv"), "stand-in corpus/data/pima_mass.csv")
}

/// Def-use edges by scanning text: each identifier read on a statement links
/// to the nearest earlier statement assigning that name.
pub fn lexical_edges(text: &str) -> BTreeSet<(usize, usize)> {
    let stmts: Vec<&str> = text
        .lines()
        .map(|l| strip_comment(l).trim())
        .filter(|l| !l.is_empty())
        .collect();
    let mut edges = BTreeSet::new();
    let mut defs: Vec<String> = Vec::new();
    for (i, s) in stmts.iter().enumerate() {
        let (lhs, rhs) = s.split_once('=').expect("assignment");
        for name in reads(rhs) {
            if let Some(j) = defs.iter().rposition(|d| *d == name) {
                edges.insert((j + 1, i + 1));
            }
        }
        defs.push(lhs.trim().to_string());
    }
    edges
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Identifiers that are neither the callee, a keyword name, nor inside a string.
fn reads(rhs: &str) -> Vec<String> {
    let chars: Vec<char> = rhs.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut in_str = false;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            in_str = !in_str;
            i += 1;
            continue;
        }
        if in_str {
            if c == '\\' {
                i += 1;
            }
            i += 1;
            continue;
        }
        let starts_ident = (c.is_ascii_alphabetic() || c == '_') && (i == 0 || !(chars[i - 1].is_ascii_alphanumeric() || chars[i - 1] == '.'));
        if starts_ident {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let mut k = i;
            while k < chars.len() && chars[k] == ' ' {
                k += 1;
            }
            let next = chars.get(k).copied();
            if next != Some('(') && next != Some('=') {
                out.push(word);
            }
            continue;
        }
        i += 1;
    }
    out
}

/// Exhaustive optimum: for every set of loaded nodes, the cheapest feasible
/// plan computes exactly the ancestors-on-demand of unloaded targets.
pub fn brute_force_cut(parents: &[Vec<usize>], costs: &[NodeCost], targets: &[bool]) -> f64 {
    let n = parents.len();
    let loadable: Vec<usize> = (0..n).filter(|&u| costs[u].load.is_some()).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << loadable.len()) {
        let mut loaded = vec![false; n];
        let mut total = 0.0;
        for (b, &u) in loadable.iter().enumerate() {
            if mask >> b & 1 == 1 {
                loaded[u] = true;
                total += costs[u].load.unwrap();
            }
        }
        let mut compute = vec![false; n];
        for u in (0..n).rev() {
            let needed = targets[u] || (0..n).any(|c| compute[c] && parents[c].contains(&u));
            if needed && !loaded[u] {
                compute[u] = true;
            }
        }
        total += (0..n).filter(|&u| compute[u]).map(|u| costs[u].compute).sum::<f64>();
        best = best.min(total);
    }
    best
}

pub fn random_dag(rng: &mut SeededRng, n: usize) -> (Vec<Vec<usize>>, Vec<NodeCost>, Vec<bool>) {
    let density = rng.uniform(0.1, 0.6);
    let parents: Vec<Vec<usize>> = (0..n).map(|i| (0..i).filter(|_| rng.next_f64() < density).collect()).collect();
    let costs: Vec<NodeCost> = (0..n)
        .map(|_| NodeCost {
            load: (rng.next_f64() < 0.6).then(|| (rng.uniform(0.0, 40.0) * 4.0).round() / 4.0),
            compute: (rng.uniform(0.5, 60.0) * 4.0).round() / 4.0,
        })
        .collect();
    let mut has_child = vec![false; n];
    for ps in &parents {
        for &p in ps {
            has_child[p] = true;
        }
    }
    let targets: Vec<bool> = (0..n).map(|u| !has_child[u] || rng.next_f64() < 0.1).collect();
    (parents, costs, targets)
}

/// Half mean squared error on the chosen actions, computed with plain loops.
pub fn naive_loss(weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>], x: &[Vec<f64>], actions: &[usize], targets: &[f64]) -> f64 {
    let last = weights.len() - 1;
    let mut total = 0.0;
    for (row, (&a, &y)) in x.iter().zip(actions.iter().zip(targets)) {
        let mut h = row.clone();
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            let mut z = b.clone();
            for (i, hi) in h.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += hi * w[i][j];
                }
            }
            h = z
                .into_iter()
                .map(|v| if l == last { v.tanh() } else if v > 0.0 { v } else { 0.01 * v })
                .collect();
        }
        total += 0.5 * (h[a] - y).powi(2);
    }
    total / x.len() as f64
}

/// Random well-formed program over a fixed dataset shape. Literals are drawn
/// from `lit_base..lit_base + 10`.
pub fn random_program(rng: &mut SeededRng, steps: usize, lit_base: i64) -> Vec<String> {
    let mut lines = vec![
        "df = load_csv(\"d.csv\")".to_string(),
        "X = drop_column(df, \"y\")".to_string(),
        "y = get_column(df, \"y\")".to_string(),
    ];
    let mut tables = vec!["X".to_string()];
    let ops = ["const_impute", "iqr_clip", "zscore_clip", "quantile_bins", "equal_width_bins", "poly_features", "variance_threshold"];
    for k in 0..steps {
        let src = tables[rng.below(tables.len())].clone();
        let op = ops[rng.below(ops.len())];
        let lit = lit_base + rng.below(10) as i64;
        let out = if rng.next_f64() < 0.5 { src.clone() } else { format!("t{k}") };
        lines.push(format!("{out} = {op}({src}, {lit})"));
        if !tables.contains(&out) {
            tables.push(out);
        }
    }
    lines.push("score = train_eval(X, y)".to_string());
    lines
}

/// Renames every variable through a bijection onto fresh names.
pub fn rename_all(lines: &[String], rng: &mut SeededRng) -> Vec<String> {
    let mut map: HashMap<String, String> = HashMap::new();
    for l in lines {
        let lhs = l.split_once('=').unwrap().0.trim().to_string();
        let n = map.len();
        map.entry(lhs).or_insert_with(|| format!("r{}_{n}", rng.below(1000)));
    }
    lines
        .iter()
        .map(|l| {
            let (lhs, rhs) = l.split_once('=').unwrap();
            let mut out = format!("{} =", map[lhs.trim()]);
            let mut word = String::new();
            let mut in_str = false;
            let flush = |word: &mut String, out: &mut String| {
                if !word.is_empty() {
                    out.push_str(map.get(word.as_str()).map_or(word.as_str(), |s| s.as_str()));
                    word.clear();
                }
            };
            for c in rhs.chars() {
                if c == '"' {
                    in_str = !in_str;
                }
                if !in_str && (c.is_ascii_alphanumeric() || c == '_') {
                    word.push(c);
                } else {
                    flush(&mut word, &mut out);
                    out.push(c);
                }
            }
            flush(&mut word, &mut out);
            out
        })
        .collect()
}

pub fn run_program(text: &str, data: &Path) -> ExecResult {
    execute(&parse(&ScriptSource::new(text)).expect("parses"), &ExecContext::new(data))
}

/// Stores every non-empty table result of a finished run.
pub fn store_tables(text: &str, run: &ExecResult, store: &mut CacheStore) {
    let g = parse(&ScriptSource::new(text)).expect("parses");
    for r in &run.node_reports {
        let node = g.node(r.node_id).unwrap();
        if let Some(d) = run.env.get(&node.output).and_then(|v| v.as_table()) {
            if store.get(r.trace_hash).is_none() && d.column_count() > 0 {
                store.insert(r.trace_hash, d, r.micros, 1, 1.0).unwrap();
            }
        }
    }
}

/// Reruns `text` through the planner, using the cold run's timings as
/// compute estimates.
pub fn warm_run(text: &str, data: &Path, store: &CacheStore, cold: &ExecResult) -> ExecResult {
    let g = parse(&ScriptSource::new(text)).expect("parses");
    let micros: Vec<f64> = cold.node_reports.iter().map(|r| r.micros as f64 + 1.0).collect();
    let plan = cache::plan(&g, store, &micros);
    execute(&g, &ExecContext::new(data).with_cache(&plan, store))
}

/// Runs `text` cold, stores every table result, then reruns it with the
/// cache. Returns (cold, warm).
pub fn cold_then_warm(text: &str, data: &Path, store: &mut CacheStore) -> (ExecResult, ExecResult) {
    let cold = run_program(text, data);
    store_tables(text, &cold, store);
    let warm = warm_run(text, data, store, &cold);
    (cold, warm)
}

/// Metric pairs (uncached, cached) for every corpus program, sharing one store.
pub fn corpus_cache_pairs() -> Vec<(String, Option<f64>, Option<f64>)> {
    let data = corpus_data_dir();
    let cache_dir = tempfile::tempdir().unwrap();
    let mut store = CacheStore::open(cache_dir.path(), 1 << 32).unwrap();
    corpus_programs()
        .into_iter()
        .map(|(name, text)| {
            let (cold, warm) = cold_then_warm(&text, data.path(), &mut store);
            (name, cold.metric, warm.metric)
        })
        .collect()
}

/// Wall time of a cold run and a warm rerun of a pipeline whose only costly
/// step is the quadratic pairwise_rank over `rows` rows.
pub fn warm_cold_timing(rows: usize) -> (std::time::Duration, std::time::Duration, Option<f64>, Option<f64>) {
    let data = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(5);
    let mut csv = String::from("x,label\n");
    for _ in 0..rows {
        let x = rng.next_f64();
        let label = u8::from(x + rng.uniform(-0.2, 0.2) > 0.5);
        csv.push_str(&format!("{x:.6},{label}\n"));
    }
    std::fs::write(data.path().join("big.csv"), csv).unwrap();
    let text = "df = load_csv(\"big.csv\")\nX = drop_column(df, \"label\")\ny = get_column(df, \"label\")\nR = pairwise_rank(X)\nscore = train_eval(R, y)\n";
    let cache_dir = tempfile::tempdir().unwrap();
    let mut store = CacheStore::open(cache_dir.path(), 1 << 32).unwrap();
    let t0 = std::time::Instant::now();
    let cold = run_program(text, data.path());
    let cold_time = t0.elapsed();
    store_tables(text, &cold, &mut store);
    let t1 = std::time::Instant::now();
    let warm = warm_run(text, data.path(), &store, &cold);
    let warm_time = t1.elapsed();
    (cold_time, warm_time, cold.metric, warm.metric)
}

pub const DIABETES_AFTER: &str = "df = load_csv(\"diabetes.csv\")
X = drop_column(df, \"Outcome\")
y = get_column(df, \"Outcome\")
X = replace_value(X, 0, \"median\", columns=[\"Glucose\", \"BloodPressure\"])
score = train_eval(X, y, metric=\"f1\", test_ratio=0.25, seed=0)
";

/// Recorded (baseline, after) F1 on the bundled stand-in data.
pub const DIABETES_GOLDEN_STAND_IN: (f64, f64) = (0.523490, 0.527027);

/// Baseline and after-imputation F1 on the diabetes data.
pub fn diabetes_scores() -> (Option<f64>, Option<f64>) {
    let data = corpus_data_dir();
    let base = std::fs::read_to_string(repo_root().join("corpus/diabetes_base.ps")).unwrap();
    (run_program(&base, data.path()).metric, run_program(DIABETES_AFTER, data.path()).metric)
}

pub enum Want {
    Num(Vec<Option<f64>>),
    Text(Vec<&'static str>),
}

/// Hand-computed results for every catalog operation: (call, input columns,
/// expected output columns by name).
#[allow(clippy::type_complexity)]
fn closed_form_cases() -> Vec<(&'static str, Vec<(&'static str, Vec<Option<f64>>)>, Vec<(&'static str, Want)>)> {
    use Want::{Num, Text};
    let n = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
    let s = (2.0f64 / 3.0).sqrt();
    vec![
        ("mean_impute()", vec![("a", vec![Some(1.0), None, Some(3.0)])], vec![("a", Num(n(&[1.0, 2.0, 3.0])))]),
        ("median_impute()", vec![("a", vec![Some(1.0), None, Some(3.0), Some(10.0)])], vec![("a", Num(n(&[1.0, 3.0, 3.0, 10.0])))]),
        ("mode_impute()", vec![("a", vec![Some(2.0), Some(2.0), None, Some(5.0)])], vec![("a", Num(n(&[2.0, 2.0, 2.0, 5.0])))]),
        ("const_impute(7)", vec![("a", vec![None, Some(1.0)])], vec![("a", Num(n(&[7.0, 1.0])))]),
        ("replace_value(0, \"median\")", vec![("a", n(&[0.0, 1.0, 3.0, 5.0]))], vec![("a", Num(n(&[3.0, 1.0, 3.0, 5.0])))]),
        ("replace_value(0, \"median\")", vec![("a", n(&[0.0, 0.0]))], vec![("a", Num(vec![None, None]))]),
        ("iqr_clip(1.5)", vec![("a", n(&[1.0, 2.0, 3.0, 4.0, 100.0]))], vec![("a", Num(n(&[1.0, 2.0, 3.0, 4.0, 7.0])))]),
        ("zscore_clip(1)", vec![("a", n(&[0.0, 0.0, 0.0, 0.0, 10.0]))], vec![("a", Num(n(&[0.0, 0.0, 0.0, 0.0, 6.0])))]),
        ("min_max_scale()", vec![("a", n(&[0.0, 5.0, 10.0])), ("c", n(&[4.0, 4.0, 4.0]))], vec![("a", Num(n(&[0.0, 0.5, 1.0]))), ("c", Num(n(&[0.0, 0.0, 0.0])))]),
        ("standard_scale()", vec![("a", n(&[1.0, 2.0, 3.0]))], vec![("a", Num(n(&[-1.0 / s, 0.0, 1.0 / s])))]),
        ("max_abs_scale()", vec![("a", n(&[-4.0, 2.0])), ("z", n(&[0.0, 0.0]))], vec![("a", Num(n(&[-1.0, 0.5]))), ("z", Num(n(&[0.0, 0.0])))]),
        ("robust_scale()", vec![("a", n(&[1.0, 2.0, 3.0, 4.0, 5.0]))], vec![("a", Num(n(&[-1.0, -0.5, 0.0, 0.5, 1.0])))]),
        ("equal_width_bins(2)", vec![("a", n(&[0.0, 1.0, 2.0, 3.0, 4.0]))], vec![("a", Num(n(&[0.0, 0.0, 1.0, 1.0, 1.0])))]),
        ("quantile_bins(2)", vec![("a", n(&[1.0, 2.0, 3.0, 4.0]))], vec![("a", Num(n(&[0.0, 0.0, 1.0, 1.0])))]),
        (
            "custom_bins([0, 18.5, 25, 30, 100], [\"underweight\", \"normal\", \"overweight\", \"obese\"])",
            vec![("BMI", n(&[22.0, 17.0, 27.5, 31.0, 250.0, -3.0]))],
            vec![("BMI", Text(vec!["normal", "underweight", "overweight", "obese", "obese", "underweight"]))],
        ),
        (
            "poly_features(2)",
            vec![("a", n(&[1.0, 2.0])), ("b", n(&[3.0, 5.0]))],
            vec![("a", Num(n(&[1.0, 2.0]))), ("b", Num(n(&[3.0, 5.0]))), ("a^2", Num(n(&[1.0, 4.0]))), ("b^2", Num(n(&[9.0, 25.0]))), ("a*b", Num(n(&[3.0, 10.0])))],
        ),
        ("interactions_only()", vec![("a", n(&[1.0, 2.0])), ("b", n(&[3.0, 5.0]))], vec![("a", Num(n(&[1.0, 2.0]))), ("b", Num(n(&[3.0, 5.0]))), ("a*b", Num(n(&[3.0, 10.0])))]),
        ("variance_threshold(0.0)", vec![("a", n(&[1.0, 2.0])), ("k", n(&[3.0, 3.0]))], vec![("a", Num(n(&[1.0, 2.0])))]),
        (
            "correlation_filter(0.95)",
            vec![("a", n(&[1.0, 2.0, 3.0])), ("b", n(&[2.0, 4.0, 6.1])), ("c", n(&[3.0, 1.0, 2.0]))],
            vec![("a", Num(n(&[1.0, 2.0, 3.0]))), ("c", Num(n(&[3.0, 1.0, 2.0])))],
        ),
    ]
}

/// Binds a call written in script syntax, e.g. `iqr_clip(1.5)`.
pub fn bind_call(call: &str) -> BoundOp {
    let text = format!("X = load_csv(\"t.csv\")\nT = {}", call.replacen('(', "(X, ", 1).replace(", )", ")"));
    let g = parse(&ScriptSource::new(text)).expect("call parses");
    let node = &g.nodes()[1];
    let positional: Vec<_> = node
        .args
        .iter()
        .filter_map(|a| match a {
            Arg::Lit(l) => Some(l.clone()),
            Arg::Var(_) => None,
        })
        .collect();
    BoundOp::bind(lookup(&node.op_name).expect("catalog op"), &positional, &node.kwargs).expect("binds")
}

/// Failures of the hand-computed examples, plus any catalog op left untested.
pub fn closed_form_failures() -> Vec<String> {
    let mut failures = Vec::new();
    let mut covered = BTreeSet::new();
    for (call, input, want) in closed_form_cases() {
        let op = bind_call(call);
        covered.insert(op.op.name);
        let d = Dataset::new("t", input.into_iter().map(|(name, v)| Column::numeric(name, v)).collect()).unwrap();
        let out = match apply_physical(&op, &d) {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("{call}: {e}"));
                continue;
            }
        };
        let names: Vec<&str> = want.iter().map(|(n, _)| *n).collect();
        if out.column_names() != names {
            failures.push(format!("{call}: columns {:?}, want {names:?}", out.column_names()));
            continue;
        }
        for ((name, w), col) in want.iter().zip(out.columns()) {
            let ok = match (w, &col.data) {
                (Want::Num(w), ColumnData::Numeric(got)) => {
                    w.len() == got.len() && w.iter().zip(got).all(|(a, b)| match (a, b) {
                        (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                        (None, None) => true,
                        _ => false,
                    })
                }
                (Want::Text(w), ColumnData::Categorical(got)) => w.iter().map(|s| Some(s.to_string())).eq(got.iter().cloned()),
                _ => false,
            };
            if !ok {
                failures.push(format!("{call}: column {name} = {:?}", col.data));
            }
        }
    }
    for op in catalog() {
        if !covered.contains(op.name) {
            failures.push(format!("{}: no closed-form case", op.name));
        }
    }
    failures
}

/// Random numeric table with zeros, missing cells and an optional text column.
pub fn random_table(rng: &mut SeededRng) -> Dataset {
    let rows = 2 + rng.below(28);
    let mut columns: Vec<Column> = (0..1 + rng.below(4))
        .map(|i| {
            let v = (0..rows)
                .map(|_| match rng.below(10) {
                    0 => None,
                    1 => Some(0.0),
                    _ => Some(rng.uniform(-1e3, 1e3)),
                })
                .collect();
            Column::numeric(format!("c{i}"), v)
        })
        .collect();
    if rng.below(2) == 1 {
        columns.push(Column::categorical("kind", (0..rows).map(|r| Some(["a", "b"][r % 2].to_string())).collect()));
    }
    Dataset::new("p", columns).unwrap()
}

/// Every catalog op with default arguments, plus custom_bins with fixed edges.
pub fn bound_catalog() -> Vec<BoundOp> {
    let mut ops: Vec<BoundOp> = catalog().iter().filter_map(|op| BoundOp::with_defaults(op).ok()).collect();
    ops.push(bind_call("custom_bins([-500, 0, 250, 1000])"));
    ops
}

/// Shape, finiteness and no-mutation contracts of one op on one table.
pub fn contract_violation(op: &BoundOp, d: &Dataset) -> Option<String> {
    let before = d.clone();
    let name = op.op.name;
    let out = match apply_physical(op, d) {
        Ok(out) => out,
        Err(OpError::EmptyResult(_)) if op.op.family == Family::FeatureSelector => return None,
        Err(e) => return Some(format!("{name}: {e}")),
    };
    if *d != before {
        return Some(format!("{name} mutated its input"));
    }
    if !out.columns().iter().all(|c| c.as_numeric().is_none_or(|v| v.iter().flatten().all(|x| x.is_finite()))) {
        return Some(format!("{name}: non-finite output"));
    }
    if out.row_count() != d.row_count() {
        return Some(format!("{name}: row count changed"));
    }
    let shape_ok = match op.op.family {
        Family::Scaler | Family::Imputer | Family::OutlierHandler | Family::Discretizer => out.column_names() == d.column_names(),
        Family::FeatureSelector => out.column_count() <= d.column_count(),
        Family::FeatureGenerator => {
            let names = out.column_names();
            d.column_names().iter().all(|c| names.contains(c))
        }
    };
    (!shape_ok).then(|| format!("{name}: column contract broken"))
}

/// Whether applying the op twice gives the first result (within `tol` for
/// the floating-point scalers).
pub fn idempotence_violation(name: &str, d: &Dataset) -> Option<String> {
    let op = BoundOp::with_defaults(lookup(name).unwrap()).unwrap();
    let Ok(once) = apply_physical(&op, d) else { return None };
    let twice = apply_physical(&op, &once).ok()?;
    let tol = if name == "standard_scale" { 1e-9 } else { 0.0 };
    let same = once.column_names() == twice.column_names()
        && once.columns().iter().zip(twice.columns()).all(|(x, y)| match (x.as_numeric(), y.as_numeric()) {
            (Some(u), Some(v)) => u.iter().zip(v).all(|(p, q)| match (p, q) {
                (Some(p), Some(q)) => (p - q).abs() <= tol,
                (None, None) => true,
                _ => false,
            }),
            _ => x == y,
        });
    (!same).then(|| format!("{name} is not idempotent"))
}

pub const IDEMPOTENT_OPS: [&str; 4] = ["min_max_scale", "max_abs_scale", "variance_threshold", "standard_scale"];

/// Graph shape with names abstracted: op, literal arguments, edges, traces.
pub fn graph_shape(g: &PipelineGraph) -> (Vec<String>, Vec<(usize, usize)>, Vec<u64>) {
    let nodes = g
        .nodes()
        .iter()
        .map(|n| {
            let lits: Vec<String> = n.literal_args().map(|l| l.to_string()).collect();
            let kw: Vec<String> = n.kwargs.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("{}({}|{})", n.op_name, lits.join(","), kw.join(","))
        })
        .collect();
    let traces = g.nodes().iter().map(|n| g.node_trace(n.id).unwrap()).collect();
    (nodes, g.edges().iter().copied().collect(), traces)
}

type Params = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);

pub fn net_params(net: &QNetwork) -> Params {
    let w = net.weights.iter().map(|w| w.outer_iter().map(|r| r.to_vec()).collect()).collect();
    let b = net.biases.iter().map(|b| b.to_vec()).collect();
    (w, b)
}

/// Worst relative error between backprop and central differences on the
/// plain-loop loss, for one random 8-4-2 network and batch.
pub fn gradcheck_worst_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut net = QNetwork::new(&[8, 4, 2], seed);
    for b in &mut net.biases {
        b.mapv_inplace(|_| rng.uniform(-0.5, 0.5));
    }
    let rows = 5;
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let actions: Vec<usize> = (0..rows).map(|_| rng.below(2)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let xa = Array2::from_shape_fn((rows, 8), |(i, j)| x[i][j]);
    let (_, grads) = net.loss_and_grad(&xa, &actions, &targets);
    let h = 1e-4;
    let (w0, b0) = net_params(&net);
    let rel = |a: f64, n: f64| {
        let diff = (a - n).abs();
        if diff < 1e-10 {
            0.0
        } else {
            diff / a.abs().max(n.abs())
        }
    };
    let mut worst: f64 = 0.0;
    for l in 0..w0.len() {
        for i in 0..w0[l].len() {
            for j in 0..w0[l][i].len() {
                let mut wp = w0.clone();
                let mut wm = w0.clone();
                wp[l][i][j] += h;
                wm[l][i][j] -= h;
                let num = (naive_loss(&wp, &b0, &x, &actions, &targets) - naive_loss(&wm, &b0, &x, &actions, &targets)) / (2.0 * h);
                worst = worst.max(rel(grads.weights[l][[i, j]], num));
            }
        }
        for j in 0..b0[l].len() {
            let mut bp = b0.clone();
            let mut bm = b0.clone();
            bp[l][j] += h;
            bm[l][j] -= h;
            let num = (naive_loss(&w0, &bp, &x, &actions, &targets) - naive_loss(&w0, &bm, &x, &actions, &targets)) / (2.0 * h);
            worst = worst.max(rel(grads.biases[l][j], num));
        }
    }
    worst
}

/// One to three random edits: insert a fresh statement, delete a leaf, or
/// change a literal. New literals come from a range the originals never use.
pub fn random_edit(lines: &[String], rng: &mut SeededRng, fresh: &mut usize) -> Vec<String> {
    let mut out = lines.to_vec();
    for _ in 0..1 + rng.below(3) {
        let body = 3..out.len() - 1;
        match rng.below(3) {
            0 => {
                let at = body.start + rng.below(body.len() + 1);
                *fresh += 1;
                out.insert(at, format!("n{fresh} = iqr_clip(X, {})", 100 + *fresh));
            }
            1 if !body.is_empty() => {
                let i = body.start + rng.below(body.len());
                let lhs = out[i].split_once('=').unwrap().0.trim().to_string();
                let read_later = out[i + 1..].iter().any(|l| l.split_once('=').unwrap().1.contains(&lhs));
                if !read_later {
                    out.remove(i);
                }
            }
            _ if !body.is_empty() => {
                let i = body.start + rng.below(body.len());
                *fresh += 1;
                if let Some(open) = out[i].rfind(", ") {
                    out[i] = format!("{}, {})", &out[i][..open], 200 + *fresh);
                }
            }
            _ => {}
        }
    }
    out
}

/// Mean final metric of the greedy policy after training, of a uniform
/// random policy over `trials` seeded runs per dataset, and of the baseline.
pub fn rl_efficacy(episodes: usize, seed: u64, trials: u64) -> (f64, f64, f64) {
    use prepline_core::recommender::{load_manifest, rollout, train, Policy, PrepEnv, TrainConfig};
    let synth = repo_root().join("corpus/synth");
    let corpus = load_manifest(&synth.join("manifest.json")).unwrap();
    let heldout = load_manifest(&synth.join("heldout.json")).unwrap();
    let cfg = TrainConfig {
        episodes,
        seed,
        ..TrainConfig::default()
    };
    let trained = train(&corpus, &cfg).unwrap();
    let n = heldout.len() as f64;
    let mut greedy = 0.0;
    let mut random = 0.0;
    let mut baseline = 0.0;
    for e in &heldout {
        baseline += PrepEnv::reset(e).unwrap().metric;
        greedy += rollout(
            e,
            &mut Policy::Greedy {
                logical: &trained.logical,
                physical: &trained.physical,
            },
        )
        .unwrap();
    }
    let mut rng = SeededRng::new(0);
    for _ in 0..trials {
        let mut policy = Policy::Random(SeededRng::new(rng.next_u64()));
        for e in &heldout {
            random += rollout(e, &mut policy).unwrap();
        }
    }
    (greedy / n, random / (n * trials as f64), baseline / n)
}
