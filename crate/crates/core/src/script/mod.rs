//! PrepScript: a closed call-and-assign language for data-prep programs, and
//! its pipeline DAG form.

mod graph;
mod syntax;

use thiserror::Error;

pub use graph::{Arg, OpCall, PipelineGraph, PipelineNode, VarId, EVAL_OP};
pub use syntax::{parse_line, Call, Literal, Statement, SynArg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("SyntaxError: {message} at line {line}")]
    Syntax { line: usize, message: String },
    #[error("UndefinedVariable: {name} at line {line}")]
    UndefinedVariable { line: usize, name: String },
    #[error("NoEvalNode: no {EVAL_OP} statement consumes {target}")]
    NoEvalNode { target: String },
}

/// Program text plus its lossless split into lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptSource {
    text: String,
}

impl ScriptSource {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Lines split on `\n`; joining them with `\n` reproduces the text.
    pub fn lines(&self) -> Vec<&str> {
        if self.text.is_empty() {
            return Vec::new();
        }
        self.text.split('\n').collect()
    }

    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Self {
        let parts: Vec<&str> = lines.iter().map(AsRef::as_ref).collect();
        Self::new(parts.join("\n"))
    }

    pub fn statements(&self) -> Result<Vec<Statement>, ScriptError> {
        let mut out = Vec::new();
        for (i, line) in self.lines().iter().enumerate() {
            if let Some(s) = parse_line(line, i + 1)? {
                out.push(s);
            }
        }
        Ok(out)
    }
}

impl From<&str> for ScriptSource {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Parses a program into its pipeline DAG.
pub fn parse(src: &ScriptSource) -> Result<PipelineGraph, ScriptError> {
    PipelineGraph::from_statements(&src.statements()?)
}

/// Pretty-prints a graph back to PrepScript, one statement per line.
pub fn emit(g: &PipelineGraph) -> ScriptSource {
    let lines: Vec<String> = g.to_statements().iter().map(ToString::to_string).collect();
    ScriptSource::from_lines(&lines)
}

pub fn trace_hash(g: &PipelineGraph, var: &VarId) -> Result<u64, ScriptError> {
    g.trace_hash(var).ok_or_else(|| ScriptError::UndefinedVariable {
        line: 0,
        name: var.to_string(),
    })
}

/// Inserts `target = op(target, args...)` right before the first evaluation
/// statement that reads `target`.
pub fn insert_node(g: &PipelineGraph, op: &OpCall, target: &str) -> Result<PipelineGraph, ScriptError> {
    g.insert(op, target)
}
