//! Live chat-completions transport.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatMessage, Completion, CompletionBackend, ModelProfile, Usage};

/// Environment variable holding the API key. Credentials are never read from
/// flags or config files.
pub const API_KEY_ENV: &str = "ALLOY_REPAIR_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), api_key: api_key.into(), client })
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Self::new(endpoint, key, timeout)
    }
}

fn classify_status(status: u16, body: &str) -> BackendError {
    let excerpt: String = body.chars().take(300).collect();
    match status {
        401 | 403 => BackendError::Auth(excerpt),
        400 | 413 if body.contains("context_length_exceeded") || body.contains("maximum context length") => {
            BackendError::ContextOverflow(excerpt)
        }
        408 | 409 | 429 | 500..=599 => BackendError::Transient(format!("HTTP {status}: {excerpt}")),
        _ => BackendError::Fatal(format!("HTTP {status}: {excerpt}")),
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError> {
        let body = RequestBody {
            model: &profile.name,
            messages: messages.iter().map(|m| WireMessage { role: m.role.as_str(), content: &m.content }).collect(),
            temperature: profile.temperature,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        parse_response(&text)
    }
}

fn parse_response(text: &str) -> Result<Completion, BackendError> {
    let parsed: ResponseBody =
        serde_json::from_str(text).map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Fatal("response has no choices".into()))?
        .message
        .content
        .unwrap_or_default();
    let usage = parsed.usage.map_or_else(Usage::default, |u| Usage::new(u.prompt_tokens, u.completion_tokens));
    Ok(Completion { message: ChatMessage::assistant(content), usage })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chat_completion_payload() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hello"}}],
                       "usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;
        let c = parse_response(body).unwrap();
        assert_eq!(c.message.content, "hello");
        assert_eq!(c.usage, Usage::new(12, 3));
    }

    #[test]
    fn null_content_and_missing_usage() {
        let c = parse_response(r#"{"choices":[{"message":{"content":null}}]}"#).unwrap();
        assert_eq!(c.message.content, "");
        assert_eq!(c.usage, Usage::default());
        assert!(parse_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify_status(401, ""), BackendError::Auth(_)));
        assert!(matches!(classify_status(429, "slow down"), BackendError::Transient(_)));
        assert!(matches!(classify_status(503, ""), BackendError::Transient(_)));
        assert!(matches!(
            classify_status(400, r#"{"error":{"code":"context_length_exceeded"}}"#),
            BackendError::ContextOverflow(_)
        ));
        assert!(matches!(classify_status(400, "bad"), BackendError::Fatal(_)));
    }

    #[test]
    fn request_body_shape() {
        let msgs = [ChatMessage::system("s"), ChatMessage::user("u")];
        let body = RequestBody {
            model: "gpt-4-1106-preview",
            messages: msgs.iter().map(|m| WireMessage { role: m.role.as_str(), content: &m.content }).collect(),
            temperature: 0.2,
        };
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"model":"gpt-4-1106-preview","messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],"temperature":0.2}"#
        );
    }
}
