use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use super::syntax::{render, Call, Literal, Statement, SynArg};
use super::ScriptError;
use crate::hash::Fnv1a;

/// Name of the statement that trains and scores the downstream model.
pub const EVAL_OP: &str = "train_eval";

/// SSA variable: the n-th assignment of a base name, displayed as `x.n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId {
    pub base: String,
    pub version: u32,
}

impl VarId {
    pub fn new(base: impl Into<String>, version: u32) -> Self {
        Self {
            base: base.into(),
            version,
        }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.base, self.version)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Lit(Literal),
    Var(VarId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineNode {
    /// 1-based position in topological (source) order.
    pub id: usize,
    pub op_name: String,
    pub inputs: Vec<VarId>,
    pub output: VarId,
    pub args: Vec<Arg>,
    pub kwargs: Vec<(String, Literal)>,
    pub source_line: usize,
}

impl PipelineNode {
    pub fn kwarg(&self, name: &str) -> Option<&Literal> {
        self.kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn literal_args(&self) -> impl Iterator<Item = &Literal> {
        self.args.iter().filter_map(|a| match a {
            Arg::Lit(l) => Some(l),
            Arg::Var(_) => None,
        })
    }

    pub fn is_eval(&self) -> bool {
        self.op_name == EVAL_OP
    }
}

/// A call to splice into a program; the target variable becomes its first
/// positional argument.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCall {
    pub op_name: String,
    pub args: Vec<Literal>,
    pub kwargs: Vec<(String, Literal)>,
}

impl OpCall {
    pub fn new(op_name: impl Into<String>) -> Self {
        Self {
            op_name: op_name.into(),
            args: Vec::new(),
            kwargs: Vec::new(),
        }
    }

    pub fn arg(mut self, lit: Literal) -> Self {
        self.args.push(lit);
        self
    }

    pub fn kwarg(mut self, name: impl Into<String>, lit: Literal) -> Self {
        self.kwargs.push((name.into(), lit));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineGraph {
    nodes: Vec<PipelineNode>,
    edges: BTreeSet<(usize, usize)>,
    var_defs: BTreeMap<VarId, usize>,
    trace: BTreeMap<VarId, u64>,
}

impl PipelineGraph {
    pub(crate) fn from_statements(stmts: &[Statement]) -> Result<Self, ScriptError> {
        let mut g = PipelineGraph::default();
        let mut latest: HashMap<&str, u32> = HashMap::new();
        for (idx, st) in stmts.iter().enumerate() {
            let id = idx + 1;
            let mut args = Vec::with_capacity(st.call.args.len());
            let mut inputs = Vec::new();
            for a in &st.call.args {
                match a {
                    SynArg::Lit(l) => args.push(Arg::Lit(l.clone())),
                    SynArg::Ident(name) => {
                        let version = *latest.get(name.as_str()).ok_or_else(|| {
                            ScriptError::UndefinedVariable {
                                line: st.line,
                                name: name.clone(),
                            }
                        })?;
                        let v = VarId::new(name.clone(), version);
                        inputs.push(v.clone());
                        args.push(Arg::Var(v));
                    }
                }
            }
            let version = latest.get(st.target.as_str()).map_or(1, |v| v + 1);
            latest.insert(&st.target, version);
            let output = VarId::new(st.target.clone(), version);
            for v in &inputs {
                g.edges.insert((g.var_defs[v], id));
            }
            let node = PipelineNode {
                id,
                op_name: st.call.name.clone(),
                inputs,
                output: output.clone(),
                args,
                kwargs: st.call.kwargs.clone(),
                source_line: st.line,
            };
            let h = g.node_hash(&node);
            g.var_defs.insert(output.clone(), id);
            g.trace.insert(output, h);
            g.nodes.push(node);
        }
        Ok(g)
    }

    /// FNV-1a over the op name, positional literals, sorted keyword literals,
    /// then the input trace hashes. Variable names never enter the hash.
    fn node_hash(&self, node: &PipelineNode) -> u64 {
        let mut h = Fnv1a::new();
        h.write(node.op_name.as_bytes()).write_u8(0xFF);
        for (i, a) in node.args.iter().enumerate() {
            if let Arg::Lit(l) = a {
                h.write(format!("{i}:{l}").as_bytes()).write_u8(0x1F);
            }
        }
        h.write_u8(0xFE);
        let mut kw: Vec<&(String, Literal)> = node.kwargs.iter().collect();
        kw.sort_by(|a, b| a.0.cmp(&b.0));
        for (k, v) in kw {
            h.write(format!("{k}={v}").as_bytes()).write_u8(0x1F);
        }
        h.write_u8(0xFD);
        for v in &node.inputs {
            h.write_u64(self.trace[v]);
        }
        h.finish()
    }

    pub fn nodes(&self) -> &[PipelineNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&PipelineNode> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn var_defs(&self) -> &BTreeMap<VarId, usize> {
        &self.var_defs
    }

    pub fn trace(&self) -> &BTreeMap<VarId, u64> {
        &self.trace
    }

    pub fn trace_hash(&self, var: &VarId) -> Option<u64> {
        self.trace.get(var).copied()
    }

    pub fn node_trace(&self, id: usize) -> Option<u64> {
        self.node(id).and_then(|n| self.trace_hash(&n.output))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parents(&self, id: usize) -> Vec<usize> {
        self.edges.iter().filter(|(_, c)| *c == id).map(|(p, _)| *p).collect()
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        self.edges.range((id, 0)..(id + 1, 0)).map(|(_, c)| *c).collect()
    }

    /// Longest path (in edges) from a source node to `id`.
    pub fn depth(&self, id: usize) -> usize {
        let mut depth = vec![0usize; self.nodes.len() + 1];
        for &(p, c) in &self.edges {
            // Edges are ordered by producer, and producers precede consumers.
            depth[c] = depth[c].max(depth[p] + 1);
        }
        depth.get(id).copied().unwrap_or(0)
    }

    pub fn sinks(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|&id| self.children(id).is_empty())
            .collect()
    }

    pub fn eval_nodes(&self) -> impl Iterator<Item = &PipelineNode> {
        self.nodes.iter().filter(|n| n.is_eval())
    }

    /// Node defining the latest version of `base`, if any.
    pub fn latest(&self, base: &str) -> Option<&VarId> {
        self.var_defs.keys().filter(|v| v.base == base).max_by_key(|v| v.version)
    }

    /// Emitted variable names. A variable keeps its base name unless another
    /// definition with that name would shadow it while it is still read;
    /// then it gets the first free `base_k`.
    fn emitted_names(&self) -> HashMap<VarId, String> {
        let last_use: HashMap<&VarId, usize> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(move |v| (v, n.id)))
            .fold(HashMap::new(), |mut m, (v, id)| {
                m.insert(v, id);
                m
            });
        let bases: HashSet<&str> = self.nodes.iter().map(|n| n.output.base.as_str()).collect();
        let mut by_name: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        let mut names = HashMap::new();
        for n in &self.nodes {
            let def = n.id;
            let end = last_use.get(&n.output).copied().unwrap_or(def);
            let overlaps = |ranges: &Vec<(usize, usize)>| {
                ranges
                    .iter()
                    .any(|&(d, e)| (d < def && def < e) || (def < d && d < end))
            };
            let mut k = 0;
            let name = loop {
                let cand = if k == 0 {
                    n.output.base.clone()
                } else {
                    format!("{}_{k}", n.output.base)
                };
                let taken_base = k > 0 && bases.contains(cand.as_str());
                if !taken_base && !by_name.get(&cand).is_some_and(overlaps) {
                    break cand;
                }
                k += 1;
            };
            by_name.entry(name.clone()).or_default().push((def, end));
            names.insert(n.output.clone(), name);
        }
        names
    }

    pub(crate) fn to_statements(&self) -> Vec<Statement> {
        let names = self.emitted_names();
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| Statement {
                target: names[&n.output].clone(),
                call: Call {
                    name: n.op_name.clone(),
                    args: n
                        .args
                        .iter()
                        .map(|a| match a {
                            Arg::Lit(l) => SynArg::Lit(l.clone()),
                            Arg::Var(v) => SynArg::Ident(names[v].clone()),
                        })
                        .collect(),
                    kwargs: n.kwargs.clone(),
                },
                line: i + 1,
            })
            .collect()
    }

    /// Canonical one-line text of a node, with base variable names.
    pub fn statement_text(&self, id: usize) -> Option<String> {
        let n = self.node(id)?;
        let args = n.args.iter().map(|a| match a {
            Arg::Lit(l) => l.to_string(),
            Arg::Var(v) => v.base.clone(),
        });
        Some(render(&n.output.base, &n.op_name, args, &n.kwargs))
    }

    pub(crate) fn insert(&self, op: &OpCall, target: &str) -> Result<PipelineGraph, ScriptError> {
        let no_eval = || ScriptError::NoEvalNode {
            target: target.to_string(),
        };
        let (eval_idx, consumed) = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_eval())
            .find_map(|(i, n)| n.inputs.iter().find(|v| v.base == target).map(|v| (i, v.clone())))
            .ok_or_else(no_eval)?;
        let names = self.emitted_names();
        let name = names[&consumed].clone();
        let mut stmts = self.to_statements();
        let mut args = vec![SynArg::Ident(name.clone())];
        args.extend(op.args.iter().cloned().map(SynArg::Lit));
        stmts.insert(
            eval_idx,
            Statement {
                target: name,
                call: Call {
                    name: op.op_name.clone(),
                    args,
                    kwargs: op.kwargs.clone(),
                },
                line: 0,
            },
        );
        for (i, s) in stmts.iter_mut().enumerate() {
            s.line = i + 1;
        }
        PipelineGraph::from_statements(&stmts)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{emit, parse, ScriptSource};
    use super::*;

    const DIABETES: &str = "df = load_csv(\"diabetes.csv\")\n\
X = drop_column(df, \"Outcome\")\n\
y = get_column(df, \"Outcome\")\n\
score = train_eval(X, y, metric=\"f1\", test_ratio=0.25, seed=0)";

    fn g(text: &str) -> PipelineGraph {
        parse(&ScriptSource::new(text)).unwrap()
    }

    #[test]
    fn load_node() {
        let g = g("df = load_csv(\"d.csv\")");
        let n = &g.nodes()[0];
        assert_eq!(n.op_name, "load_csv");
        assert!(n.inputs.is_empty());
        assert_eq!(n.output, VarId::new("df", 1));
    }

    #[test]
    fn reassignment_is_ssa() {
        let g = g("a = load_csv(\"d\")\nx = a(a)\nx = b(x)");
        assert_eq!(g.nodes()[1].output.to_string(), "x.1");
        assert_eq!(g.nodes()[2].output.to_string(), "x.2");
        assert_eq!(g.nodes()[2].inputs, vec![VarId::new("x", 1)]);
        assert!(g.edges().contains(&(2, 3)));
    }

    #[test]
    fn diabetes_reference_shape() {
        let g = g(DIABETES);
        assert_eq!(g.len(), 4);
        let want: BTreeSet<(usize, usize)> = [(1, 2), (1, 3), (2, 4), (3, 4)].into();
        assert_eq!(g.edges(), &want);
        assert_eq!(g.sinks(), vec![4]);
        assert_eq!(g.depth(4), 2);
    }

    #[test]
    fn undefined_variable() {
        let err = parse(&ScriptSource::new("a = load_csv(\"x\")\n\nb = f(c)")).unwrap_err();
        assert_eq!(
            err,
            ScriptError::UndefinedVariable {
                line: 3,
                name: "c".into()
            }
        );
        assert_eq!(err.to_string(), "UndefinedVariable: c at line 3");
    }

    #[test]
    fn self_read_before_definition_is_undefined() {
        assert!(parse(&ScriptSource::new("x = f(x)")).is_err());
    }

    #[test]
    fn hashes_ignore_names() {
        let a = g(DIABETES);
        let b = g(&DIABETES.replace("df", "frame").replace("X", "feats").replace("y =", "lbl =").replace(", y,", ", lbl,").replace("score", "s"));
        let ha: Vec<u64> = a.nodes().iter().map(|n| a.trace_hash(&n.output).unwrap()).collect();
        let hb: Vec<u64> = b.nodes().iter().map(|n| b.trace_hash(&n.output).unwrap()).collect();
        assert_eq!(ha, hb);
    }

    #[test]
    fn literal_change_propagates() {
        let base = "d = load_csv(\"x\")\na = const_impute(d, 0.0)\nb = f(d)\nc = g(a, b)";
        let a = g(base);
        let b = g(&base.replace("0.0", "1.0"));
        let h = |g: &PipelineGraph, i: usize| g.node_trace(i).unwrap();
        assert_eq!(h(&a, 1), h(&b, 1));
        assert_ne!(h(&a, 2), h(&b, 2));
        assert_eq!(h(&a, 3), h(&b, 3));
        assert_ne!(h(&a, 4), h(&b, 4));
    }

    #[test]
    fn argument_positions_matter() {
        let a = g("d = load_csv(\"x\")\ne = f(d, 1)");
        let b = g("d = load_csv(\"x\")\ne = f(1, d)");
        assert_ne!(a.node_trace(2), b.node_trace(2));
    }

    #[test]
    fn kwarg_order_is_canonical() {
        let a = g("d = f(a=1, b=2)");
        let b = g("d = f(b=2, a=1)");
        assert_eq!(a.node_trace(1), b.node_trace(1));
    }

    #[test]
    fn emit_empty() {
        assert_eq!(emit(&PipelineGraph::default()).text(), "");
    }

    #[test]
    fn emit_strips_versions() {
        let text = "d = load_csv(\"x\")\nd = f(d)\nd = g(d, 1.5, k=\"v\")";
        assert_eq!(emit(&g(text)).text(), text);
    }

    #[test]
    fn insert_before_eval() {
        let src = "df = load_csv(\"diabetes.csv\")\n\
X = drop_column(df, \"Outcome\")\n\
X = replace_value(X, 0, \"median\")\n\
y = get_column(df, \"Outcome\")\n\
score = train_eval(X, y, metric=\"f1\")";
        let g = g(src);
        let out = g.insert(&OpCall::new("min_max_scale"), "X").unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.nodes()[4].op_name, "min_max_scale");
        assert_eq!(out.nodes()[4].inputs, vec![VarId::new("X", 2)]);
        assert_eq!(out.nodes()[5].inputs[0], VarId::new("X", 3));
        let lines = emit(&out).text().to_string();
        assert_eq!(lines.lines().nth(4), Some("X = min_max_scale(X)"));
    }

    #[test]
    fn successive_inserts_keep_call_order() {
        let g0 = g(DIABETES);
        let g1 = g0.insert(&OpCall::new("first"), "X").unwrap();
        let g2 = g1.insert(&OpCall::new("second").arg(Literal::Int(2)), "X").unwrap();
        let ops: Vec<&str> = g2.nodes().iter().map(|n| n.op_name.as_str()).collect();
        assert_eq!(ops, ["load_csv", "drop_column", "get_column", "first", "second", "train_eval"]);
    }

    #[test]
    fn insert_without_eval() {
        assert!(matches!(
            PipelineGraph::default().insert(&OpCall::new("x"), "X"),
            Err(ScriptError::NoEvalNode { .. })
        ));
        let g = g("X = load_csv(\"a\")\ns = train_eval(X, X)");
        assert!(matches!(g.insert(&OpCall::new("x"), "Z"), Err(ScriptError::NoEvalNode { .. })));
    }

    #[test]
    fn emit_renames_shadowed_reads() {
        // x.1 is read after x.2 is defined: a graph that straight-line text
        // cannot express without renaming.
        let base = g("x = load_csv(\"a\")\ny = f(x)\ns = train_eval(x, y)");
        let mut stmts = base.to_statements();
        stmts[1].target = "x".into();
        stmts[1].call.args = vec![SynArg::Ident("x".into())];
        stmts[2].call.args = vec![SynArg::Ident("x".into()), SynArg::Ident("x".into())];
        let mut graph = PipelineGraph::from_statements(&stmts).unwrap();
        // Rebind the eval to read x.1 and x.2.
        graph.nodes[2].args = vec![Arg::Var(VarId::new("x", 1)), Arg::Var(VarId::new("x", 2))];
        graph.nodes[2].inputs = vec![VarId::new("x", 1), VarId::new("x", 2)];
        let text = emit(&graph);
        assert_eq!(text.text(), "x = load_csv(\"a\")\nx_1 = f(x)\ns = train_eval(x, x_1)");
    }
}
