//! Chat-completion gateway: conversations, model profiles, token accounting and
//! the backends that actually produce completions.

mod cost;
mod history;
mod http;
mod scripted;

use std::fmt;
use std::ops::{Add, AddAssign};
use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::accumulate_cost;
pub use history::{truncate_history, HistoryError};
pub use http::{HttpBackend, API_KEY_ENV, DEFAULT_ENDPOINT};
pub use scripted::{ForbiddenBackend, ScriptAgent, ScriptError, ScriptedBackend, ScriptedProgram, ScriptedTurn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversationError {
    #[error("{0} message content must not be empty")]
    EmptyContent(&'static str),
    #[error("system messages are only allowed before the first user/assistant turn")]
    MisplacedSystem,
    #[error("expected alternating user/assistant turns, got two {0} messages in a row")]
    NotAlternating(&'static str),
}

/// Ordered message history: a system prefix followed by alternating
/// user/assistant turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<ChatMessage>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_messages(messages: Vec<ChatMessage>) -> Result<Self, ConversationError> {
        let mut conv = Self::new();
        for m in messages {
            conv.push(m)?;
        }
        Ok(conv)
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), ConversationError> {
        if message.role != Role::Assistant && message.content.is_empty() {
            return Err(ConversationError::EmptyContent(message.role.as_str()));
        }
        match (self.messages.last().map(|m| m.role), message.role) {
            (Some(Role::User), Role::System) | (Some(Role::Assistant), Role::System) => {
                return Err(ConversationError::MisplacedSystem)
            }
            (Some(prev), next) if prev == next && next != Role::System => {
                return Err(ConversationError::NotAlternating(next.as_str()))
            }
            _ => {}
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn estimated_tokens(&self, estimator: &dyn Fn(&str) -> usize) -> usize {
        self.messages.iter().map(|m| estimator(&m.content)).sum()
    }

    // Used by truncation, which only ever removes whole messages from a valid
    // history and so cannot break the system-prefix rule.
    pub(crate) fn from_trusted(messages: Vec<ChatMessage>) -> Self {
        Self { messages }
    }
}

/// Offline token estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    /// Model identifier sent to the backend.
    pub name: String,
    pub context_window_tokens: u32,
    pub input_price_per_1m_usd: Decimal,
    pub output_price_per_1m_usd: Decimal,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("profile `{0}`: prices must be non-negative")]
    NegativePrice(String),
    #[error("profile `{0}`: temperature {1} outside [0, 2]")]
    Temperature(String, f64),
    #[error("profile `{0}`: context window must be positive")]
    ZeroWindow(String),
}

impl ModelProfile {
    pub fn new(name: &str, context_window_tokens: u32, input_price: Decimal, output_price: Decimal) -> Self {
        Self {
            name: name.to_string(),
            context_window_tokens,
            input_price_per_1m_usd: input_price,
            output_price_per_1m_usd: output_price,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    /// GPT-3.5 Turbo (1106): 16,385 tokens, $1 in / $2 out per 1M.
    pub fn gpt_35_turbo() -> Self {
        Self::new("gpt-3.5-turbo-1106", 16_385, Decimal::from(1), Decimal::from(2))
    }

    /// GPT-4-32k (0613): 32,768 tokens, $60 in / $120 out per 1M.
    pub fn gpt_4_32k() -> Self {
        Self::new("gpt-4-32k-0613", 32_768, Decimal::from(60), Decimal::from(120))
    }

    /// GPT-4 Turbo (1106-preview): 128k tokens, $10 in / $30 out per 1M.
    pub fn gpt_4_turbo() -> Self {
        Self::new("gpt-4-1106-preview", 128_000, Decimal::from(10), Decimal::from(30))
    }

    pub fn builtins() -> Vec<ModelProfile> {
        vec![Self::gpt_35_turbo(), Self::gpt_4_32k(), Self::gpt_4_turbo()]
    }

    /// Looks up a built-in profile by API name or short alias.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "gpt-3.5-turbo" | "gpt-3.5-turbo-1106" => Some(Self::gpt_35_turbo()),
            "gpt-4-32k" | "gpt-4-32k-0613" => Some(Self::gpt_4_32k()),
            "gpt-4-turbo" | "gpt-4-1106-preview" => Some(Self::gpt_4_turbo()),
            _ => None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.input_price_per_1m_usd.is_sign_negative() || self.output_price_per_1m_usd.is_sign_negative() {
            return Err(ProfileError::NegativePrice(self.name.clone()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProfileError::Temperature(self.name.clone(), self.temperature));
        }
        if self.context_window_tokens == 0 {
            return Err(ProfileError::ZeroWindow(self.name.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub message: ChatMessage,
    pub usage: Usage,
}

/// Failure reported by a backend for a single call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Network hiccups, rate limits, 5xx. Worth retrying.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("request exceeds the model context window: {0}")]
    ContextOverflow(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    /// Permanent failure, e.g. a scripted program ran out of turns.
    #[error("transport failure: {0}")]
    Fatal(String),
}

/// Something that turns a message list into one assistant message.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, messages: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError> {
        (**self).complete(messages, profile)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, messages: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError> {
        (**self).complete(messages, profile)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, messages: &[ChatMessage], profile: &ModelProfile) -> Result<Completion, BackendError> {
        (**self).complete(messages, profile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("context overflow: {0}")]
    ContextOverflow(String),
    #[error("authentication error: {0}")]
    Auth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_delay: Duration::ZERO }
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

/// Sends `conversation` to `backend`, retrying transient failures.
///
/// The conversation must already fit the profile's window (see
/// [`truncate_history`]); an oversize request is rejected locally without
/// touching the backend.
pub fn complete(
    conversation: &Conversation,
    profile: &ModelProfile,
    backend: &dyn CompletionBackend,
    retry: &RetryPolicy,
    estimator: &dyn Fn(&str) -> usize,
) -> Result<Completion, GatewayError> {
    let estimated = conversation.estimated_tokens(estimator);
    if estimated > profile.context_window_tokens as usize {
        return Err(GatewayError::ContextOverflow(format!(
            "estimated {estimated} tokens > window of {} for {}",
            profile.context_window_tokens, profile.name
        )));
    }

    let mut attempts = 0;
    loop {
        attempts += 1;
        match backend.complete(conversation.messages(), profile) {
            Ok(completion) => return Ok(completion),
            Err(BackendError::Transient(msg)) if attempts <= retry.max_retries => {
                let delay = retry.delay_before_retry(attempts - 1);
                tracing::debug!(attempt = attempts, ?delay, error = %msg, "retrying completion");
                std::thread::sleep(delay);
            }
            Err(BackendError::Transient(last)) | Err(BackendError::Fatal(last)) => {
                return Err(GatewayError::Transport { attempts, last })
            }
            Err(BackendError::ContextOverflow(msg)) => return Err(GatewayError::ContextOverflow(msg)),
            Err(BackendError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
        }
    }
}

impl fmt::Display for ChatMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.role.as_str(), self.content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: BackendError,
    }

    impl CompletionBackend for Flaky {
        fn complete(&self, _: &[ChatMessage], _: &ModelProfile) -> Result<Completion, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(Completion { message: ChatMessage::assistant("ok"), usage: Usage::new(1, 1) })
            }
        }
    }

    fn conv() -> Conversation {
        Conversation::from_messages(vec![ChatMessage::system("sys"), ChatMessage::user("hi")]).unwrap()
    }

    #[test]
    fn conversation_invariants() {
        let mut c = conv();
        assert_eq!(c.push(ChatMessage::user("again")), Err(ConversationError::NotAlternating("user")));
        c.push(ChatMessage::assistant("")).unwrap();
        assert_eq!(c.push(ChatMessage::system("late")), Err(ConversationError::MisplacedSystem));
        assert_eq!(c.push(ChatMessage::user("")), Err(ConversationError::EmptyContent("user")));
        assert!(Conversation::from_messages(vec![ChatMessage::system("a"), ChatMessage::system("b")]).is_ok());
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let b = Flaky { failures: 3, calls: AtomicU32::new(0), error: BackendError::Transient("503".into()) };
        let out = complete(&conv(), &ModelProfile::gpt_4_turbo(), &b, &RetryPolicy::immediate(3), &estimate_tokens);
        assert_eq!(out.unwrap().message.content, "ok");
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn gives_up_after_bounded_retries() {
        let b = Flaky { failures: 10, calls: AtomicU32::new(0), error: BackendError::Transient("503".into()) };
        let err = complete(&conv(), &ModelProfile::gpt_4_turbo(), &b, &RetryPolicy::immediate(3), &estimate_tokens)
            .unwrap_err();
        assert_eq!(err, GatewayError::Transport { attempts: 4, last: "503".into() });
    }

    #[test]
    fn auth_and_overflow_are_not_retried() {
        let b = Flaky { failures: 10, calls: AtomicU32::new(0), error: BackendError::Auth("bad key".into()) };
        let err = complete(&conv(), &ModelProfile::gpt_4_turbo(), &b, &RetryPolicy::immediate(3), &estimate_tokens)
            .unwrap_err();
        assert!(matches!(err, GatewayError::Auth(_)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn oversize_conversation_is_rejected_locally() {
        let b = Flaky { failures: 0, calls: AtomicU32::new(0), error: BackendError::Fatal(String::new()) };
        let big = Conversation::from_messages(vec![ChatMessage::user("x".repeat(70_000))]).unwrap();
        let err = complete(&big, &ModelProfile::gpt_35_turbo(), &b, &RetryPolicy::immediate(0), &estimate_tokens)
            .unwrap_err();
        assert!(matches!(err, GatewayError::ContextOverflow(_)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        let delays: Vec<_> = (0..3).map(|i| p.delay_before_retry(i).as_secs()).collect();
        assert_eq!(delays, [1, 2, 4]);
    }

    #[test]
    fn builtin_profiles_validate() {
        for p in ModelProfile::builtins() {
            p.validate().unwrap();
            assert_eq!(p.temperature, 0.2);
        }
        assert!(ModelProfile::gpt_4_turbo().with_temperature(2.5).validate().is_err());
        assert_eq!(ModelProfile::builtin("gpt-4-32k").unwrap().context_window_tokens, 32_768);
        assert!(ModelProfile::builtin("llama").is_none());
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
