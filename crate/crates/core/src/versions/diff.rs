//! Gestalt (Ratcliff-Obershelp) line diff with provenance-relaxed equality.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::script::{parse, Arg, PipelineGraph, ScriptSource};

/// Matched run: `a[a_start..a_start+len]` pairs with `b[b_start..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

/// Longest run of pairwise-equal elements inside the given ranges. Ties go to
/// the run starting earliest in `a`, then earliest in `b`.
fn longest_match<F: Fn(usize, usize) -> bool>(eq: &F, alo: usize, ahi: usize, blo: usize, bhi: usize) -> Block {
    let mut best = Block { a_start: alo, b_start: blo, len: 0 };
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let k = j - blo + 1;
            cur[k] = if eq(i, j) { prev[k - 1] + 1 } else { 0 };
            if cur[k] > best.len {
                best = Block {
                    a_start: i + 1 - cur[k],
                    b_start: j + 1 - cur[k],
                    len: cur[k],
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.iter_mut().for_each(|c| *c = 0);
    }
    best
}

/// Matching blocks in increasing order, found by taking the longest match and
/// recursing on both sides of it.
pub fn matching_blocks_by<F: Fn(usize, usize) -> bool>(n: usize, m: usize, eq: F) -> Vec<Block> {
    let mut out = Vec::new();
    let mut stack = vec![(0, n, 0, m)];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let b = longest_match(&eq, alo, ahi, blo, bhi);
        if b.len == 0 {
            continue;
        }
        out.push(b);
        stack.push((alo, b.a_start, blo, b.b_start));
        stack.push((b.a_start + b.len, ahi, b.b_start + b.len, bhi));
    }
    out.sort_by_key(|b| (b.a_start, b.b_start));
    out
}

pub fn matching_blocks<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Block> {
    matching_blocks_by(a.len(), b.len(), |i, j| a[i] == b[j])
}

/// 2M / (|a| + |b|), with M the number of matched elements; 1.0 for two
/// empty sequences.
pub fn similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let m: usize = matching_blocks(a, b).iter().map(|b| b.len).sum();
    2.0 * m as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Insert,
    Delete,
}

/// `index` is the line index in the old program for deletions and in the new
/// program for insertions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub kind: ChangeKind,
    pub index: usize,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub changes: Vec<Change>,
}

impl EditScript {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    /// Replays the script: drop deleted lines, then place inserted lines at
    /// their indices in the new program.
    pub fn apply<S: AsRef<str>>(&self, old: &[S]) -> Vec<String> {
        let mut deleted = vec![false; old.len()];
        for c in self.changes.iter().filter(|c| c.kind == ChangeKind::Delete) {
            deleted[c.index] = true;
        }
        let mut out: Vec<String> = old
            .iter()
            .zip(&deleted)
            .filter(|(_, d)| !**d)
            .map(|(l, _)| l.as_ref().to_string())
            .collect();
        let mut inserts: Vec<&Change> = self.changes.iter().filter(|c| c.kind == ChangeKind::Insert).collect();
        inserts.sort_by_key(|c| c.index);
        for c in inserts {
            out.insert(c.index, c.line.clone());
        }
        out
    }
}

/// A statement line with its variables abstracted away: the canonical text
/// with each identifier replaced by a positional placeholder, plus the trace
/// hash behind each identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LineKey {
    skeleton: String,
    hashes: Vec<u64>,
}

fn line_keys(src: &ScriptSource) -> Vec<Option<LineKey>> {
    let mut keys = vec![None; src.lines().len()];
    let Ok(g) = parse(src) else { return keys };
    for n in g.nodes() {
        keys[n.source_line - 1] = Some(key_of(&g, n.id));
    }
    keys
}

fn key_of(g: &PipelineGraph, id: usize) -> LineKey {
    let n = g.node(id).expect("node exists");
    let mut hashes = vec![g.trace_hash(&n.output).expect("outputs are traced")];
    let mut skeleton = format!("$0 = {}(", n.op_name);
    let mut parts = Vec::new();
    for a in &n.args {
        match a {
            Arg::Lit(l) => parts.push(l.to_string()),
            Arg::Var(v) => {
                parts.push(format!("${}", hashes.len()));
                hashes.push(g.trace_hash(v).expect("inputs are traced"));
            }
        }
    }
    parts.extend(n.kwargs.iter().map(|(k, v)| format!("{k}={v}")));
    skeleton.push_str(&parts.join(", "));
    skeleton.push(')');
    LineKey { skeleton, hashes }
}

/// Shortest edit script between two programs under relaxed line equality:
/// lines are equal when verbatim equal, or when they differ only in variable
/// names and every paired variable has the same provenance.
pub fn diff(old: &ScriptSource, new: &ScriptSource) -> EditScript {
    let a = old.lines();
    let b = new.lines();
    let ka = line_keys(old);
    let kb = line_keys(new);
    let eq = |i: usize, j: usize| {
        a[i] == b[j]
            || match (&ka[i], &kb[j]) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            }
    };
    let blocks = matching_blocks_by(a.len(), b.len(), eq);
    let mut changes = Vec::new();
    let (mut i, mut j) = (0, 0);
    let sentinel = Block { a_start: a.len(), b_start: b.len(), len: 0 };
    for blk in blocks.iter().chain(std::iter::once(&sentinel)) {
        changes.extend((i..blk.a_start).map(|k| Change {
            kind: ChangeKind::Delete,
            index: k,
            line: a[k].to_string(),
        }));
        changes.extend((j..blk.b_start).map(|k| Change {
            kind: ChangeKind::Insert,
            index: k,
            line: b[k].to_string(),
        }));
        i = blk.a_start + blk.len;
        j = blk.b_start + blk.len;
    }
    EditScript { changes }
}

/// Line pairs matched by [`diff`], as (old index, new index).
pub fn matched_lines(old: &ScriptSource, new: &ScriptSource) -> Vec<(usize, usize)> {
    let script = diff(old, new);
    let touched = |kind| -> HashSet<usize> { script.changes.iter().filter(|c| c.kind == kind).map(|c| c.index).collect() };
    let (dels, ins) = (touched(ChangeKind::Delete), touched(ChangeKind::Insert));
    let a: Vec<usize> = (0..old.lines().len()).filter(|i| !dels.contains(i)).collect();
    let b: Vec<usize> = (0..new.lines().len()).filter(|j| !ins.contains(j)).collect();
    a.into_iter().zip(b).collect()
}
