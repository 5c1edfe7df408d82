//! Load/compute/prune planning as a minimum s-t cut.
//!
//! Nodes on the source side are computed. A target on the sink side pays its
//! load cost through `s -> u`. A non-target `u` on the sink side pays its load
//! cost through `d_u -> u` only when some child is computed, because every
//! child `v` has an uncuttable edge `v -> d_u`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Load,
    Compute,
    Prune,
}

/// Per-node costs. `load = None` means the node has no usable cache entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCost {
    pub load: Option<f64>,
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlan {
    /// Indexed like the input nodes.
    pub assignment: Vec<Assignment>,
    pub total_cost: f64,
}

impl CachePlan {
    /// Plan that computes every node.
    pub fn compute_all(n: usize) -> Self {
        Self {
            assignment: vec![Assignment::Compute; n],
            total_cost: 0.0,
        }
    }

    pub fn count(&self, a: Assignment) -> usize {
        self.assignment.iter().filter(|&&x| x == a).count()
    }
}

/// Cost of an assignment, or `None` when it violates a plan invariant.
pub fn plan_cost(parents: &[Vec<usize>], costs: &[NodeCost], targets: &[bool], a: &[Assignment]) -> Option<f64> {
    let mut total = 0.0;
    for u in 0..a.len() {
        match a[u] {
            Assignment::Compute => {
                if parents[u].iter().any(|&p| a[p] == Assignment::Prune) {
                    return None;
                }
                total += costs[u].compute;
            }
            Assignment::Load => total += costs[u].load?,
            Assignment::Prune if targets[u] => return None,
            Assignment::Prune => {}
        }
    }
    Some(total)
}

struct Flow {
    cap: Vec<Vec<f64>>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Self { cap: vec![vec![0.0; n]; n] }
    }

    fn add(&mut self, u: usize, v: usize, c: f64) {
        self.cap[u][v] += c;
    }

    /// Edmonds-Karp; returns the set of nodes reachable from `s` in the final
    /// residual graph.
    fn min_cut(mut self, s: usize, t: usize, eps: f64) -> Vec<bool> {
        let n = self.cap.len();
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for (v, pv) in prev.iter_mut().enumerate() {
                    if *pv == usize::MAX && self.cap[u][v] > eps {
                        *pv = u;
                        q.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return prev.iter().map(|&p| p != usize::MAX).collect();
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                let u = prev[v];
                bottleneck = bottleneck.min(self.cap[u][v]);
                v = u;
            }
            let mut v = t;
            while v != s {
                let u = prev[v];
                self.cap[u][v] -= bottleneck;
                self.cap[v][u] += bottleneck;
                v = u;
            }
        }
    }
}

/// Optimal plan over a DAG given as parent lists. Every node may always be
/// computed, so a feasible plan exists.
pub fn plan_dag(parents: &[Vec<usize>], costs: &[NodeCost], targets: &[bool]) -> CachePlan {
    let n = parents.len();
    if n == 0 {
        return CachePlan::compute_all(0);
    }
    let finite: f64 = costs.iter().map(|c| c.compute + c.load.unwrap_or(0.0)).sum();
    let big = 4.0 * (finite + 1.0);
    let eps = 1e-12 * (finite + 1.0);
    // 0..n: nodes, n..2n: d_u, 2n: source, 2n+1: sink.
    let (s, t) = (2 * n, 2 * n + 1);
    let mut f = Flow::new(2 * n + 2);
    for u in 0..n {
        let load = costs[u].load.unwrap_or(big);
        f.add(u, t, costs[u].compute);
        // A target pays its load once, through the source edge.
        if targets[u] {
            f.add(s, u, load);
        } else {
            f.add(n + u, u, load);
        }
        for &p in &parents[u] {
            f.add(u, n + p, big);
        }
    }
    let source_side = f.min_cut(s, t, eps);
    let mut assignment: Vec<Assignment> = (0..n)
        .map(|u| if source_side[u] { Assignment::Compute } else { Assignment::Prune })
        .collect();
    for u in 0..n {
        if assignment[u] == Assignment::Compute {
            for &p in &parents[u] {
                if assignment[p] == Assignment::Prune {
                    assignment[p] = Assignment::Load;
                }
            }
        } else if targets[u] {
            assignment[u] = Assignment::Load;
        }
    }
    let total_cost = plan_cost(parents, costs, targets, &assignment).expect("min cut below the big-M bound is feasible");
    CachePlan { assignment, total_cost }
}
