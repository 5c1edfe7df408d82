//! Chat-completion client for hosted or local code models.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{GenError, Prompt};
use crate::ops::catalog;
use crate::script::ScriptSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "PREPLINE_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

const GRAMMAR: &str = "Programs are one statement per line: `name = op(arg, ..., key=value)`. \
Arguments are variable names, numbers, double-quoted strings or [lists]. `#` starts a comment. \
Builtins: load_csv(path), drop_column(df, name), get_column(df, name), \
train_eval(X, y, metric=\"f1\", test_ratio=0.25, seed=0). \
Every catalog operation takes the feature table first and accepts columns=[...].";

pub fn system_prompt(base: &ScriptSource) -> String {
    let mut s = String::from("You edit data preparation programs written in a small language.\n");
    s.push_str(GRAMMAR);
    s.push_str("\n\nOperations:\n");
    for op in catalog() {
        let params: Vec<String> = op.params.iter().map(|p| p.name.to_string()).collect();
        s.push_str(&format!("- {}({}): {}\n", op.name, params.join(", "), op.prompt_template));
    }
    s.push_str("\nCurrent program:\n```\n");
    s.push_str(base.text().trim_end());
    s.push_str("\n```\nReply with the complete updated program in one fenced code block.");
    s
}

/// First fenced block of the reply, or the whole reply when there is none.
pub fn extract_code(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        // Skip the info string on the opening fence.
        let body = after.find('\n').map_or("", |i| &after[i + 1..]);
        if let Some(end) = body.find("```") {
            return body[..end].to_string();
        }
    }
    reply.to_string()
}

pub(super) fn complete(cfg: &RemoteConfig, base: &ScriptSource, prompt: &Prompt) -> Result<String, GenError> {
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let body = json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": system_prompt(base)},
            {"role": "user", "content": prompt.text},
        ],
    });
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(cfg.timeout_secs)).build();
    let mut req = agent.post(&url);
    if let Ok(key) = std::env::var(&cfg.api_key_env) {
        req = req.set("Authorization", &format!("Bearer {key}"));
    }
    let reply: serde_json::Value = req
        .send_json(body)
        .map_err(|e| GenError::Remote(e.to_string()))?
        .into_json()
        .map_err(|e| GenError::Remote(format!("unreadable reply: {e}")))?;
    reply["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| GenError::Remote("reply has no choices[0].message.content".into()))
}
