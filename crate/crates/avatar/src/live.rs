//! Adapter for an OpenAI-compatible chat-completions endpoint.
//!
//! Prompts come from the scripted fixture: the entry for a step key is
//! rendered and sent as the user message, and the endpoint's reported
//! usage replaces the scripted token counts.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use soda_core::sim::{render_template, AdapterError, Generation, LanguageModel, ScriptedAdapter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct LiveAdapter {
    config: LiveConfig,
    prompts: ScriptedAdapter,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Usage,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl LiveAdapter {
    pub fn new(config: LiveConfig, prompts: ScriptedAdapter) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, prompts, agent }
    }
}

impl LanguageModel for LiveAdapter {
    fn generate(&mut self, key: &str, context: &BTreeMap<String, String>) -> Result<Generation, AdapterError> {
        let entry = self
            .prompts
            .entry(key)
            .ok_or_else(|| AdapterError::ScriptMiss(key.into()))?;
        let prompt = render_template(key, &entry.template, context)?;
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &prompt,
            }],
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.config.url);
        if let Some(var) = &self.config.api_key_env {
            let token = std::env::var(var).map_err(|_| AdapterError::Endpoint(format!("{var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let endpoint = |e: ureq::Error| AdapterError::Endpoint(e.to_string());
        let mut resp = req.send_json(&body).map_err(endpoint)?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(endpoint)?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AdapterError::Endpoint("response has no choices".into()))?;
        Ok(Generation {
            text,
            tokens_in: parsed.usage.prompt_tokens,
            tokens_out: parsed.usage.completion_tokens,
        })
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use soda_core::sim::ScriptEntry;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Answers one request with `body` and returns what it received.
    fn one_shot_server(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(req).unwrap()
        });
        (url, handle)
    }

    fn prompts() -> ScriptedAdapter {
        let mut m = BTreeMap::new();
        m.insert(
            "k".to_string(),
            ScriptEntry {
                template: "hello {name}".into(),
                tokens_in: 1,
                tokens_out: 1,
            },
        );
        ScriptedAdapter::new(m)
    }

    #[test]
    fn reports_endpoint_usage() {
        let (url, server) = one_shot_server(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let mut a = LiveAdapter::new(
            LiveConfig {
                url,
                model: "m".into(),
                api_key_env: None,
                timeout_secs: 5,
            },
            prompts(),
        );
        let mut ctx = BTreeMap::new();
        ctx.insert("name".to_string(), "Mira".to_string());
        let g = a.generate("k", &ctx).unwrap();
        assert_eq!((g.text.as_str(), g.tokens_in, g.tokens_out), ("hi", 12, 3));
        assert!(!a.is_deterministic());
        let seen = server.join().unwrap();
        let (_, json) = seen.split_once("\r\n\r\n").unwrap();
        let sent: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(sent["messages"][0]["content"], "hello Mira");
        assert_eq!(sent["model"], "m");
    }

    #[test]
    fn unreachable_endpoint_is_an_endpoint_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut a = LiveAdapter::new(
            LiveConfig {
                url: format!("http://127.0.0.1:{port}/v1"),
                model: "m".into(),
                api_key_env: None,
                timeout_secs: 2,
            },
            prompts(),
        );
        let mut ctx = BTreeMap::new();
        ctx.insert("name".to_string(), "x".to_string());
        assert!(matches!(a.generate("k", &ctx), Err(AdapterError::Endpoint(_))));
        assert!(matches!(a.generate("nope", &ctx), Err(AdapterError::ScriptMiss(_))));
    }
}
