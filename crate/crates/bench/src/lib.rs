//! Fixtures shared by the benchmarks.

use prepline_core::cache::NodeCost;
use prepline_core::rng::SeededRng;

/// A baseline program followed by `steps` single-table operations.
pub fn long_program(steps: usize) -> String {
    let ops = ["median_impute", "iqr_clip", "min_max_scale", "standard_scale", "poly_features", "variance_threshold"];
    let mut s = String::from("df = load_csv(\"d.csv\")\nX = drop_column(df, \"y\")\ny = get_column(df, \"y\")\n");
    for i in 0..steps {
        s.push_str(&format!("X = {}(X)\n", ops[i % ops.len()]));
    }
    s.push_str("score = train_eval(X, y)\n");
    s
}

/// Random DAG in topological order: parent lists, costs and sink targets.
pub fn random_dag(n: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<NodeCost>, Vec<bool>) {
    let mut rng = SeededRng::new(seed);
    let parents: Vec<Vec<usize>> = (0..n).map(|i| (0..i).filter(|_| rng.next_f64() < 0.3).collect()).collect();
    let costs = (0..n)
        .map(|_| NodeCost {
            load: (rng.next_f64() < 0.6).then(|| rng.uniform(1.0, 50.0)),
            compute: rng.uniform(1.0, 100.0),
        })
        .collect();
    let mut targets = vec![true; n];
    for ps in &parents {
        for &p in ps {
            targets[p] = false;
        }
    }
    (parents, costs, targets)
}
