use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    #[error("no script entry for `{0}`")]
    ScriptMiss(String),
    #[error("script `{key}` needs context value `{name}`")]
    MissingContext { key: String, name: String },
    #[error("endpoint failure: {0}")]
    Endpoint(String),
}

/// Source of generations for simulated agents.
pub trait LanguageModel {
    fn generate(&mut self, key: &str, context: &BTreeMap<String, String>) -> Result<Generation, AdapterError>;

    /// True when outputs are reproducible from the inputs alone.
    fn is_deterministic(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    /// Output text; `{name}` is replaced from the call context.
    pub template: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Replays fixed generations keyed by step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedAdapter {
    entries: BTreeMap<String, ScriptEntry>,
}

impl ScriptedAdapter {
    pub fn new(entries: BTreeMap<String, ScriptEntry>) -> Self {
        Self { entries }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn entry(&self, key: &str) -> Option<&ScriptEntry> {
        self.entries.get(key)
    }
}

/// Fills `{name}` placeholders. `{{` and `}}` are literal braces.
pub fn render_template(key: &str, template: &str, context: &BTreeMap<String, String>) -> Result<String, AdapterError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if let Some(after) = tail.strip_prefix('}') {
            out.push('}');
            rest = after;
            continue;
        }
        let Some(end) = tail.find('}') else {
            out.push_str(tail);
            return Ok(out);
        };
        let name = &tail[1..end];
        let value = context.get(name).ok_or_else(|| AdapterError::MissingContext {
            key: key.into(),
            name: name.into(),
        })?;
        out.push_str(value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl LanguageModel for ScriptedAdapter {
    fn generate(&mut self, key: &str, context: &BTreeMap<String, String>) -> Result<Generation, AdapterError> {
        let entry = self
            .entries
            .get(key)
            .ok_or_else(|| AdapterError::ScriptMiss(key.into()))?;
        Ok(Generation {
            text: render_template(key, &entry.template, context)?,
            tokens_in: entry.tokens_in,
            tokens_out: entry.tokens_out,
        })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
