//! Verification of candidate specifications against the Alloy Analyzer.

mod report;
mod runner;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::normalize_spec;

pub use report::{
    judge, render_report_text, AnalyzerReport, CommandKind, CommandResult, CompileError, FailureReason, Outcome,
    RunnerMeta, Verdict, REPORT_TEXT_LIMIT, TRUNCATION_MARKER,
};
pub use runner::{parse_runner_output, RunnerVerifier, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("runner launch failure: {0}")]
    LaunchFailure(String),
    #[error("runner protocol error: {0}")]
    Protocol(String),
    #[error("analyzer timed out after {0:?}")]
    Timeout(Duration),
    #[error("specification is empty")]
    EmptySpecification,
    #[error("temporary file error: {0}")]
    Io(String),
}

/// Anything that can analyze a candidate specification.
pub trait Verifier: Send + Sync {
    fn verify(&self, spec_text: &str) -> Result<AnalyzerReport, VerifyError>;
}

impl<V: Verifier + ?Sized> Verifier for &V {
    fn verify(&self, spec_text: &str) -> Result<AnalyzerReport, VerifyError> {
        (**self).verify(spec_text)
    }
}

impl<V: Verifier + ?Sized> Verifier for std::sync::Arc<V> {
    fn verify(&self, spec_text: &str) -> Result<AnalyzerReport, VerifyError> {
        (**self).verify(spec_text)
    }
}

enum Matcher {
    /// Equal after comment/whitespace normalization.
    Exact(String),
    Contains(String),
}

/// In-process verifier answering from a fixed rule table. Rules are tried in
/// insertion order; unmatched specs get the default answer.
pub struct StubVerifier {
    rules: Vec<(Matcher, Result<AnalyzerReport, VerifyError>)>,
    default: Result<AnalyzerReport, VerifyError>,
    calls: AtomicUsize,
}

impl StubVerifier {
    pub fn new(default: AnalyzerReport) -> Self {
        Self { rules: Vec::new(), default: Ok(default), calls: AtomicUsize::new(0) }
    }

    pub fn failing(default: VerifyError) -> Self {
        Self { rules: Vec::new(), default: Err(default), calls: AtomicUsize::new(0) }
    }

    pub fn on_exact(mut self, spec: &str, report: AnalyzerReport) -> Self {
        self.rules.push((Matcher::Exact(normalize_spec(spec)), Ok(report)));
        self
    }

    pub fn on_contains(mut self, needle: &str, report: AnalyzerReport) -> Self {
        self.rules.push((Matcher::Contains(needle.to_string()), Ok(report)));
        self
    }

    pub fn error_on_contains(mut self, needle: &str, error: VerifyError) -> Self {
        self.rules.push((Matcher::Contains(needle.to_string()), Err(error)));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Verifier for StubVerifier {
    fn verify(&self, spec_text: &str) -> Result<AnalyzerReport, VerifyError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if spec_text.trim().is_empty() {
            return Err(VerifyError::EmptySpecification);
        }
        let normalized = normalize_spec(spec_text);
        self.rules
            .iter()
            .find(|(m, _)| match m {
                Matcher::Exact(s) => *s == normalized,
                Matcher::Contains(n) => spec_text.contains(n.as_str()),
            })
            .map_or(&self.default, |(_, r)| r)
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_rules_in_order() {
        let fixed = AnalyzerReport::with_commands(vec![CommandResult::check(0, "A", false, Some(0))]);
        let cex = AnalyzerReport::with_commands(vec![CommandResult::check(0, "A", true, Some(0))]);
        let stub = StubVerifier::new(cex.clone())
            .on_exact("sig A {}\ncheck A", fixed.clone())
            .on_contains("BROKEN", AnalyzerReport::compile_error("Syntax error", 1, 1))
            .error_on_contains("SLOW", VerifyError::Timeout(Duration::from_secs(60)));
        assert_eq!(stub.verify("sig A {}  // same\ncheck A").unwrap(), fixed);
        assert!(!stub.verify("BROKEN").unwrap().compiled);
        assert_eq!(stub.verify("SLOW"), Err(VerifyError::Timeout(Duration::from_secs(60))));
        assert_eq!(stub.verify("sig B {}").unwrap(), cex);
        assert_eq!(stub.verify("  "), Err(VerifyError::EmptySpecification));
        assert_eq!(stub.calls(), 5);
    }
}
