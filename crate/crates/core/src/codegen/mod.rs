//! Prompt-driven program generation with an execute-and-repair loop.

mod remote;

use std::collections::VecDeque;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecResult;
use crate::ops::{lookup, parse_value, resolve_prompt, BoundOp, Family, ParamKind, ResolvedPrompt};
use crate::script::{emit, insert_node, parse, Literal, PipelineGraph, ScriptError, ScriptSource};

pub use remote::{extract_code, system_prompt, RemoteConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Fine,
    Coarse,
    Refinement,
    ErrorFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub kind: PromptKind,
}

impl Prompt {
    pub fn new(text: impl Into<String>, kind: PromptKind) -> Self {
        Self { text: text.into(), kind }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("UnknownPrompt: {0}")]
    UnknownPrompt(String),
    #[error("RemoteError: {0}")]
    Remote(String),
    #[error("RepairExhausted: no error-free program after {} attempts", .0.len())]
    RepairExhausted(Vec<Attempt>),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

#[derive(Debug, Clone)]
pub enum GenBackend {
    Template,
    Remote(RemoteConfig),
    ScriptedMock(VecDeque<String>),
}

impl GenBackend {
    pub fn scripted<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        GenBackend::ScriptedMock(replies.into_iter().map(Into::into).collect())
    }

    /// Canned replies from a JSON list of strings.
    pub fn scripted_from_file(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path).map_err(|e| GenError::Remote(format!("{}: {e}", path.display())))?;
        let replies: Vec<String> =
            serde_json::from_str(&text).map_err(|e| GenError::Remote(format!("{}: {e}", path.display())))?;
        Ok(Self::scripted(replies))
    }

    pub fn name(&self) -> &'static str {
        match self {
            GenBackend::Template => "template",
            GenBackend::Remote(_) => "remote",
            GenBackend::ScriptedMock(_) => "scripted_mock",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attempt {
    pub prompt: Prompt,
    pub program: ScriptSource,
    pub result: ExecResult,
}

#[derive(Debug, Clone)]
pub struct GenOutcome {
    pub final_program: ScriptSource,
    pub attempts: Vec<Attempt>,
    pub repaired: bool,
}

pub const DEFAULT_MAX_RETRIES: usize = 3;

fn bins_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^the ([A-Za-z0-9_]+) should be cut into (\[[^\]]*\]) with (?:labels )?(\[[^\]]*\])\.?$")
            .expect("valid regex")
    })
}

/// "The BMI should be cut into [..] with [..]" turns into custom_bins on that
/// column. Typographic quotes around labels are accepted.
fn custom_bins_from(refinement: &str) -> Option<BoundOp> {
    let caps = bins_re().captures(refinement.trim())?;
    let labels = caps[3].replace(['\u{2018}', '\u{2019}', '\'', '`', '\u{201C}', '\u{201D}'], "\"");
    let edges = parse_value(ParamKind::NumberList, &caps[2])?;
    let labels = parse_value(ParamKind::TextList, &labels)?;
    let columns = Literal::List(vec![Literal::Str(caps[1].to_string())]);
    BoundOp::bind(
        lookup("custom_bins")?,
        &[edges, labels],
        &[("columns".to_string(), columns)],
    )
    .ok()
}

fn template_op(text: &str) -> Result<BoundOp, GenError> {
    let unknown = || GenError::UnknownPrompt(text.to_string());
    let (resolved, refinement) = resolve_prompt(text).ok_or_else(unknown)?;
    let family = match &resolved {
        ResolvedPrompt::Physical(b) => b.op.family,
        ResolvedPrompt::Family(f) => *f,
    };
    match (resolved, refinement) {
        (_, Some(r)) if family == Family::Discretizer => custom_bins_from(&r).ok_or_else(unknown),
        (_, Some(_)) => Err(unknown()),
        (ResolvedPrompt::Physical(b), None) => Ok(b),
        (ResolvedPrompt::Family(f), None) => BoundOp::with_defaults(f.default_op()).map_err(|_| unknown()),
    }
}

/// The feature table the evaluator reads; new steps go in front of it.
fn feature_var(g: &PipelineGraph) -> String {
    g.eval_nodes()
        .next()
        .and_then(|n| n.inputs.first())
        .map_or_else(|| "X".to_string(), |v| v.base.clone())
}

pub fn generate(base: &ScriptSource, prompt: &Prompt, backend: &mut GenBackend) -> Result<ScriptSource, GenError> {
    match backend {
        GenBackend::Template => {
            let g = parse(base)?;
            let op = template_op(&prompt.text)?;
            let g2 = insert_node(&g, &op.to_call(), &feature_var(&g))?;
            Ok(emit(&g2))
        }
        GenBackend::Remote(cfg) => remote::complete(cfg, base, prompt).map(|reply| ScriptSource::new(extract_code(&reply))),
        GenBackend::ScriptedMock(queue) => queue
            .pop_front()
            .map(|reply| ScriptSource::new(extract_code(&reply)))
            .ok_or_else(|| GenError::Remote("scripted backend has no replies left".into())),
    }
}

/// Generates, runs, and feeds the verbatim error back as the next prompt
/// until a program runs clean. At most `max_retries + 1` attempts.
pub fn generate_checked(
    base: &ScriptSource,
    prompt: &Prompt,
    backend: &mut GenBackend,
    mut run: impl FnMut(&PipelineGraph) -> ExecResult,
    max_retries: usize,
) -> Result<GenOutcome, GenError> {
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut current_base = base.clone();
    let mut current_prompt = prompt.clone();
    loop {
        let program = generate(&current_base, &current_prompt, backend)?;
        let result = match parse(&program) {
            Ok(g) => run(&g),
            Err(e) => ExecResult::error(e.to_string()),
        };
        let feedback = result.error_message.clone().filter(|_| !result.is_ok());
        attempts.push(Attempt {
            prompt: current_prompt,
            program: program.clone(),
            result,
        });
        match feedback {
            None => {
                let repaired = attempts.len() > 1;
                return Ok(GenOutcome {
                    final_program: program,
                    attempts,
                    repaired,
                });
            }
            Some(_) if matches!(backend, GenBackend::Template) || attempts.len() > max_retries => {
                return Err(GenError::RepairExhausted(attempts));
            }
            Some(message) => {
                current_prompt = Prompt::new(message, PromptKind::ErrorFeedback);
                current_base = program;
            }
        }
    }
}
