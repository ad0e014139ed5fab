//! Chat-completion endpoint backend.
//!
//! Sends the crop as a base64 PNG data URL next to the rendered prompt and
//! parses the reply with the protocol's parser. Transport errors and 5xx/429
//! responses are retried with exponential backoff and jitter; parse failures
//! are model behavior and are returned as-is.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::parse::{parse_bbox_response, parse_toolcall_response};
use super::prompts::PromptTemplates;
use super::{GroundError, Grounder, GroundingOutcome, GroundingQuery};

/// Environment variable consulted for the bearer token when none is set in
/// the config.
pub const TOKEN_ENV_VAR: &str = "ZOOMGROUND_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptProtocol {
    /// Model answers `[x1, y1, x2, y2]`; the click is the box center.
    BboxText,
    /// Model answers with a `<tool_call>` carrying `coordinate: [x, y]`.
    ToolCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub protocol: PromptProtocol,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, protocol: PromptProtocol) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            protocol,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            auth_token: None,
            backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        if self.base_url.trim().is_empty() {
            return Err("endpoint base URL is empty".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Counting semaphore bounding concurrent requests per endpoint.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpGrounder {
    config: EndpointConfig,
    templates: PromptTemplates,
    agent: ureq::Agent,
    token: Option<String>,
    in_flight: InFlight,
}

enum Attempt {
    Reply(Value),
    Retry(String),
    Fatal(GroundError),
}

impl HttpGrounder {
    pub fn new(config: EndpointConfig, templates: PromptTemplates) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        let token = config
            .auth_token
            .clone()
            .or_else(|| std::env::var(TOKEN_ENV_VAR).ok())
            .filter(|t| !t.is_empty());
        let in_flight = InFlight::new(config.max_in_flight);
        Self {
            config,
            templates,
            agent,
            token,
            in_flight,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Builds the chat-completion body for a query whose crop has already
    /// been encoded.
    pub fn build_request(&self, query: &GroundingQuery<'_>, png: &[u8]) -> Value {
        let data_url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        );
        let image = json!({"type": "image_url", "image_url": {"url": data_url}});
        let messages = match self.config.protocol {
            PromptProtocol::BboxText => json!([{
                "role": "user",
                "content": [image, {"type": "text", "text": self.templates.render_bbox(query.instruction)}],
            }]),
            PromptProtocol::ToolCall => json!([
                {
                    "role": "system",
                    "content": self.templates.render_toolcall_system(query.width(), query.height()),
                },
                {
                    "role": "user",
                    "content": [image, {"type": "text", "text": self.templates.render_toolcall_user(query.instruction)}],
                },
            ]),
        };
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0.0,
        });
        if let Some(max_tokens) = self.config.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn parse_reply(&self, reply: &str, query: &GroundingQuery<'_>) -> GroundingOutcome {
        match self.config.protocol {
            PromptProtocol::BboxText => parse_bbox_response(reply, query.width(), query.height()),
            PromptProtocol::ToolCall => parse_toolcall_response(reply, query.width(), query.height()),
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self
            .agent
            .post(&self.config.completions_url())
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        debug!(status, body = %text, "endpoint response");
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Reply(v),
                Err(e) => Attempt::Fatal(GroundError::Http {
                    status,
                    body: format!("invalid JSON body: {e}"),
                }),
            },
            401 | 403 => Attempt::Fatal(GroundError::Auth {
                status,
                env_var: TOKEN_ENV_VAR,
            }),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {text}")),
            _ => Attempt::Fatal(GroundError::Http { status, body: text }),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_ms.saturating_mul(1u64 << attempt.min(16));
        let jitter = if base > 0 {
            rand::rng().random_range(0..=base / 2)
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }
}

/// Pulls the assistant text out of a chat-completion response. Structured
/// `tool_calls` are rewritten into the `<tool_call>` text form.
pub(crate) fn extract_reply(resp: &Value) -> Option<String> {
    let message = resp.get("choices")?.get(0)?.get("message")?;
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        if let Some(call) = calls.first() {
            let f = call.get("function").unwrap_or(call);
            let wrapped = json!({
                "name": f.get("name").cloned().unwrap_or(Value::Null),
                "arguments": f.get("arguments").cloned().unwrap_or(Value::Null),
            });
            return Some(format!("<tool_call>\n{wrapped}\n</tool_call>"));
        }
    }
    match message.get("content")? {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

fn elide_images(body: &Value) -> Value {
    match body {
        Value::String(s) if s.starts_with("data:image/") => Value::String(format!("<image {} bytes>", s.len())),
        Value::Array(a) => Value::Array(a.iter().map(elide_images).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), elide_images(v))).collect()),
        other => other.clone(),
    }
}

impl Grounder for HttpGrounder {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        query.validate()?;
        let png = query.encode_png()?;
        let body = self.build_request(query, &png);
        debug!(sample = query.sample_id, round = query.round, request = %elide_images(&body), "endpoint request");

        let _permit = self.in_flight.acquire();
        let attempts = self.config.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Reply(resp) => {
                    return Ok(match extract_reply(&resp) {
                        Some(text) => self.parse_reply(&text, query),
                        None => GroundingOutcome::ParseFailure { raw: resp.to_string() },
                    });
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    warn!(attempt = attempt + 1, attempts, error = %msg, "endpoint call failed");
                    last_error = msg;
                }
            }
        }
        Err(GroundError::Transport {
            attempts,
            message: last_error,
        })
    }

    fn identity(&self) -> Value {
        json!({
            "kind": "http",
            "base_url": self.config.base_url,
            "model": self.config.model,
            "protocol": self.config.protocol,
            "image_encoding": "png",
            "prompt_hashes": self.templates.hashes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_plain_content() {
        let resp = json!({"choices": [{"message": {"content": "[1, 2, 3, 4]"}}]});
        assert_eq!(extract_reply(&resp).unwrap(), "[1, 2, 3, 4]");
    }

    #[test]
    fn extract_content_parts() {
        let resp = json!({"choices": [{"message": {"content": [{"type": "text", "text": "[1, 2,"}, {"type": "text", "text": " 3, 4]"}]}}]});
        assert_eq!(extract_reply(&resp).unwrap(), "[1, 2, 3, 4]");
    }

    #[test]
    fn extract_structured_tool_call() {
        let resp = json!({"choices": [{"message": {"content": null, "tool_calls": [{
            "type": "function",
            "function": {"name": "computer_use", "arguments": "{\"action\": \"left_click\", \"coordinate\": [500, 300]}"}
        }]}}]});
        let text = extract_reply(&resp).unwrap();
        let p = parse_toolcall_response(&text, 1000, 600).as_point().unwrap();
        assert_eq!((p.x, p.y), (0.5, 0.5));
    }

    #[test]
    fn elision_hides_payloads() {
        let body = json!({"a": [{"url": "data:image/png;base64,AAAA"}]});
        assert_eq!(elide_images(&body)["a"][0]["url"], "<image 26 bytes>");
    }

    #[test]
    fn url_joining() {
        let mut c = EndpointConfig::new("http://h/v1/", "m", PromptProtocol::BboxText);
        assert_eq!(c.completions_url(), "http://h/v1/chat/completions");
        c.base_url = "http://h/v1/chat/completions".into();
        assert_eq!(c.completions_url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://h", "m", PromptProtocol::ToolCall);
        assert!(c.validate().is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
    }
}
