//! The repair loop: prompt, complete, parse, compare, verify, classify, feed back.

mod audit;
mod feedback;
mod session;
mod trace;

use std::fmt;
use std::time::Instant;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::AnalyzerReport;
use crate::corpus::BugType;
use crate::llm::{ModelProfile, Usage};
use crate::protocol::ParseVia;

pub use audit::audit_session;
pub use feedback::{build_feedback, Feedback, FeedbackError, PromptAgent};
pub use session::{classify_iteration, run_session, SessionEnv};
pub use trace::{load_traces, read_trace, trace_path, write_trace, TraceError, TRACE_EXTENSION};

pub const DEFAULT_BUDGET: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeedbackLevel {
    NoFeedback,
    GenericFeedback,
    AutoFeedback,
}

impl FeedbackLevel {
    pub fn short(self) -> &'static str {
        match self {
            FeedbackLevel::NoFeedback => "NF",
            FeedbackLevel::GenericFeedback => "GF",
            FeedbackLevel::AutoFeedback => "AF",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "nf" | "none" | "nofeedback" => Some(FeedbackLevel::NoFeedback),
            "gf" | "generic" | "genericfeedback" => Some(FeedbackLevel::GenericFeedback),
            "af" | "auto" | "autofeedback" => Some(FeedbackLevel::AutoFeedback),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub id: String,
    pub repair_profile: ModelProfile,
    pub prompt_profile: Option<ModelProfile>,
    pub feedback_level: FeedbackLevel,
    pub budget: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettingError {
    #[error("setting `{0}`: budget must be at least 1")]
    ZeroBudget(String),
    #[error("setting `{0}`: a prompt-agent profile is required for auto-feedback and forbidden otherwise")]
    PromptProfileMismatch(String),
    #[error(transparent)]
    Profile(#[from] crate::llm::ProfileError),
}

impl Setting {
    /// Builds a setting; auto-feedback reuses the repair model for the prompt agent.
    pub fn new(id: &str, profile: ModelProfile, level: FeedbackLevel, budget: u32) -> Self {
        let prompt_profile = (level == FeedbackLevel::AutoFeedback).then(|| profile.clone());
        Self { id: id.to_string(), repair_profile: profile, prompt_profile, feedback_level: level, budget }
    }

    pub fn validate(&self) -> Result<(), SettingError> {
        if self.budget == 0 {
            return Err(SettingError::ZeroBudget(self.id.clone()));
        }
        if self.prompt_profile.is_some() != (self.feedback_level == FeedbackLevel::AutoFeedback) {
            return Err(SettingError::PromptProfileMismatch(self.id.clone()));
        }
        self.repair_profile.validate()?;
        if let Some(p) = &self.prompt_profile {
            p.validate()?;
        }
        Ok(())
    }

    /// The six GPT-4 settings: {GPT-4-32k, GPT-4 Turbo} x {NF, GF, AF}.
    pub fn paper_matrix(budget: u32) -> Vec<Setting> {
        let levels = [FeedbackLevel::NoFeedback, FeedbackLevel::GenericFeedback, FeedbackLevel::AutoFeedback];
        [ModelProfile::gpt_4_32k(), ModelProfile::gpt_4_turbo()]
            .into_iter()
            .flat_map(|p| levels.map(|l| (p.clone(), l)))
            .enumerate()
            .map(|(i, (p, l))| Setting::new(&format!("Setting-{}", i + 1), p, l, budget))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureCategory {
    Counterexample,
    SyntaxError,
    WrongFormat,
    Repetition,
    NoInstance,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::Counterexample,
        FailureCategory::SyntaxError,
        FailureCategory::WrongFormat,
        FailureCategory::Repetition,
        FailureCategory::NoInstance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::Counterexample => "Counterexample",
            FailureCategory::SyntaxError => "SyntaxError",
            FailureCategory::WrongFormat => "WrongFormat",
            FailureCategory::Repetition => "Repetition",
            FailureCategory::NoInstance => "NoInstance",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IterationStatus {
    Fixed,
    Failed(FailureCategory),
}

impl fmt::Display for IterationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IterationStatus::Fixed => f.write_str("Fixed"),
            IterationStatus::Failed(c) => c.fmt(f),
        }
    }
}

/// The prompt agent's request/response, made after a failed iteration to
/// produce the next turn's feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAgentExchange {
    pub request: String,
    pub response: Option<String>,
    pub usage: Usage,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: u32,
    /// User message appended right before this turn's completion.
    pub feedback_sent: Option<String>,
    pub raw_response: String,
    pub parse_via: Option<ParseVia>,
    pub proposed_spec: Option<String>,
    pub analyzer_report: Option<AnalyzerReport>,
    pub status: IterationStatus,
    /// Repair-agent usage for this turn.
    pub usage: Usage,
    pub wall_time_ms: u64,
    pub prompt_agent: Option<PromptAgentExchange>,
}

impl IterationRecord {
    pub fn total_usage(&self) -> Usage {
        self.usage + self.prompt_agent.as_ref().map_or_else(Usage::default, |p| p.usage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalStatus {
    Fixed { at_iteration: u32 },
    Unfixed,
}

impl FinalStatus {
    pub fn fixed_at(self) -> Option<u32> {
        match self {
            FinalStatus::Fixed { at_iteration } => Some(at_iteration),
            FinalStatus::Unfixed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    /// The analyzer timed out; the session was stopped.
    VerifierTimeout,
    /// The prompt agent failed and generic feedback was sent instead.
    PromptAgentFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub iteration: u32,
    pub kind: AnomalyKind,
    pub detail: String,
}

/// A turn that was cut short by an infrastructure failure and therefore has
/// no status. Its usage still counts toward the session totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedTurn {
    pub index: u32,
    pub raw_response: Option<String>,
    pub proposed_spec: Option<String>,
    pub verifier_invoked: bool,
    pub usage: Usage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairSession {
    pub task_id: String,
    pub family: String,
    pub bug_type: BugType,
    pub setting_id: String,
    pub feedback_level: FeedbackLevel,
    pub budget: u32,
    pub repair_model: String,
    pub prompt_model: Option<String>,
    pub system_prompt: String,
    pub initial_prompt: String,
    pub iterations: Vec<IterationRecord>,
    pub final_status: FinalStatus,
    pub total_usage: Usage,
    pub total_cost_usd: Decimal,
    pub total_time_ms: u64,
    pub aborted_turn: Option<AbortedTurn>,
    pub anomalies: Vec<Anomaly>,
    pub error: Option<String>,
}

impl RepairSession {
    pub fn is_fixed(&self) -> bool {
        matches!(self.final_status, FinalStatus::Fixed { .. })
    }

    /// Sessions stopped by an analyzer timeout stay out of failure statistics.
    pub fn is_anomalous(&self) -> bool {
        self.anomalies.iter().any(|a| a.kind == AnomalyKind::VerifierTimeout)
    }

    pub fn analyzer_invocations(&self) -> usize {
        let recorded = self.iterations.iter().filter(|i| i.analyzer_report.is_some()).count();
        recorded + usize::from(self.aborted_turn.as_ref().is_some_and(|t| t.verifier_invoked))
    }
}

/// Millisecond time source, swappable so scripted runs stay reproducible.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// A clock that never advances.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_ms(&self) -> u64 {
        0
    }
}
