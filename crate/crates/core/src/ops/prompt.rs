//! Mapping between operations and natural-language prompts, both ways.

use std::sync::OnceLock;

use regex::Regex;

use super::{catalog, BoundOp, Family, ParamKind, PhysicalOperation};
use crate::codegen::{Prompt, PromptKind};
use crate::script::{parse_line, Literal, SynArg};

#[derive(Debug, Clone, Copy)]
pub enum PromptSubject<'a> {
    Physical(&'a BoundOp),
    Family(Family),
}

fn scope_text(columns: Option<&[String]>) -> String {
    match columns {
        Some(cols) if !cols.is_empty() => format!(" in columns {}", cols.join(", ")),
        _ => String::new(),
    }
}

fn render_fine(op: &BoundOp) -> String {
    let mut text = op.op.prompt_template.replace("{scope}", &scope_text(op.columns.as_deref()));
    for (spec, value) in op.op.params.iter().zip(&op.values) {
        let shown = value.as_ref().map_or_else(|| "none".to_string(), Literal::prose);
        text = text.replace(&format!("{{{}}}", spec.name), &shown);
    }
    text
}

/// Fine prompts come from the operation's template; families use their
/// coarse prompt. A refinement is appended verbatim after a full stop.
pub fn prompt_for(subject: PromptSubject<'_>, refinement: Option<&str>) -> Prompt {
    let (base, kind) = match subject {
        PromptSubject::Physical(op) => (render_fine(op), PromptKind::Fine),
        PromptSubject::Family(f) => (f.coarse_prompt().to_string(), PromptKind::Coarse),
    };
    match refinement.map(str::trim).filter(|r| !r.is_empty()) {
        Some(r) => Prompt::new(format!("{base}. {r}"), PromptKind::Refinement),
        None => Prompt::new(base, kind),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedPrompt {
    Physical(BoundOp),
    Family(Family),
}

struct Matcher {
    op: &'static PhysicalOperation,
    re: Regex,
}

fn param_pattern(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Number => r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?",
        ParamKind::Text => r"[A-Za-z_][A-Za-z0-9_]*",
        ParamKind::NumberList | ParamKind::TextList => r"\[[^\]]*\]|none",
    }
}

fn matchers() -> &'static [Matcher] {
    static M: OnceLock<Vec<Matcher>> = OnceLock::new();
    M.get_or_init(|| {
        let placeholder = Regex::new(r"\{([a-z_]+)\}").expect("valid regex");
        catalog()
            .iter()
            .map(|op| {
                let tpl = op.prompt_template;
                let mut pattern = String::from("(?s)^");
                let mut last = 0;
                for cap in placeholder.captures_iter(tpl) {
                    let m = cap.get(0).expect("whole match");
                    pattern.push_str(&regex::escape(&tpl[last..m.start()]));
                    let name = &cap[1];
                    if name == "scope" {
                        pattern.push_str(r"(?: in columns (?P<scope>[A-Za-z0-9_]+(?:, [A-Za-z0-9_]+)*))?");
                    } else {
                        let spec = op.param(name).expect("template names a declared parameter");
                        pattern.push_str(&format!("(?P<{name}>{})", param_pattern(spec.kind)));
                    }
                    last = m.end();
                }
                pattern.push_str(&regex::escape(&tpl[last..]));
                pattern.push_str("(?P<rest>.*)$");
                Matcher {
                    op,
                    re: Regex::new(&pattern).expect("template compiles to a regex"),
                }
            })
            .collect()
    })
}

pub(crate) fn parse_value(kind: ParamKind, text: &str) -> Option<Literal> {
    match kind {
        ParamKind::Number => {
            if text.contains(['.', 'e', 'E']) {
                text.parse().ok().map(Literal::Float)
            } else {
                text.parse().ok().map(Literal::Int)
            }
        }
        ParamKind::Text => Some(Literal::Str(text.to_string())),
        ParamKind::NumberList | ParamKind::TextList => {
            let stmt = parse_line(&format!("x = f({text})"), 1).ok()??;
            match stmt.call.args.into_iter().next()? {
                SynArg::Lit(l @ Literal::List(_)) => Some(l),
                _ => None,
            }
        }
    }
}

/// Splits trailing text into an optional refinement. The remainder must be
/// separated from the matched prompt by punctuation.
fn refinement_of(rest: &str) -> Option<Option<String>> {
    if rest.is_empty() {
        return Some(None);
    }
    if !rest.starts_with(|c: char| ".,;:!".contains(c)) {
        return None;
    }
    let r = rest.trim_start_matches(|c: char| c.is_whitespace() || ".,;:!".contains(c)).trim_end();
    Some(if r.is_empty() { None } else { Some(r.to_string()) })
}

/// Inverse of [`prompt_for`]: recovers the operation or family a prompt was
/// rendered from, plus any refinement text that followed it.
pub fn resolve_prompt(text: &str) -> Option<(ResolvedPrompt, Option<String>)> {
    let text = text.trim();
    for m in matchers() {
        let Some(caps) = m.re.captures(text) else { continue };
        let Some(refinement) = refinement_of(caps.name("rest").map_or("", |r| r.as_str())) else {
            continue;
        };
        let mut kwargs = Vec::new();
        for spec in &m.op.params {
            if let Some(v) = caps.name(spec.name) {
                if v.as_str() == "none" {
                    continue;
                }
                let lit = parse_value(spec.kind, v.as_str())?;
                kwargs.push((spec.name.to_string(), lit));
            }
        }
        if let Some(scope) = caps.name("scope") {
            let cols = scope.as_str().split(", ").map(|c| Literal::Str(c.to_string())).collect();
            kwargs.push(("columns".to_string(), Literal::List(cols)));
        }
        let bound = BoundOp::bind(m.op, &[], &kwargs).ok()?;
        return Some((ResolvedPrompt::Physical(bound), refinement));
    }
    for f in Family::ALL {
        if let Some(rest) = text.strip_prefix(f.coarse_prompt()) {
            if let Some(refinement) = refinement_of(rest) {
                return Some((ResolvedPrompt::Family(f), refinement));
            }
        }
    }
    None
}
