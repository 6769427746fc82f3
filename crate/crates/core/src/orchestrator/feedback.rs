use thiserror::Error;

use super::{FeedbackLevel, PromptAgentExchange};
use crate::analyzer::{render_report_text, AnalyzerReport};
use crate::llm::{complete, ChatMessage, CompletionBackend, Conversation, ModelProfile, RetryPolicy};
use crate::protocol::{render_generic_feedback, render_prompt_agent_request, FEEDBACK_NO_FEEDBACK};

/// The prompt agent's model and transport.
#[derive(Clone, Copy)]
pub struct PromptAgent<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub profile: &'a ModelProfile,
    pub retry: &'a RetryPolicy,
    pub estimator: &'a dyn Fn(&str) -> usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feedback {
    pub text: String,
    pub exchange: Option<PromptAgentExchange>,
    /// Auto-feedback failed and the generic text was used instead.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("auto-feedback requires a prompt agent")]
    MissingPromptAgent,
    #[error("a prompt agent is only used with auto-feedback")]
    UnexpectedPromptAgent,
}

/// Feedback after an analyzer-confirmed failure.
pub fn build_feedback(
    level: FeedbackLevel,
    report: &AnalyzerReport,
    proposed_spec: &str,
    prompt_agent: Option<PromptAgent<'_>>,
) -> Result<Feedback, FeedbackError> {
    let report_text = render_report_text(report);
    match (level, prompt_agent) {
        (FeedbackLevel::NoFeedback, None) => Ok(plain(FEEDBACK_NO_FEEDBACK.to_string())),
        (FeedbackLevel::GenericFeedback, None) => Ok(plain(render_generic_feedback(&report_text))),
        (FeedbackLevel::AutoFeedback, Some(agent)) => Ok(ask_prompt_agent(&report_text, proposed_spec, agent)),
        (FeedbackLevel::AutoFeedback, None) => Err(FeedbackError::MissingPromptAgent),
        (_, Some(_)) => Err(FeedbackError::UnexpectedPromptAgent),
    }
}

fn plain(text: String) -> Feedback {
    Feedback { text, exchange: None, fell_back: false }
}

// Fresh single-message conversation per call; nothing is shared with the
// repair agent's history.
fn ask_prompt_agent(report_text: &str, proposed_spec: &str, agent: PromptAgent<'_>) -> Feedback {
    let request = match render_prompt_agent_request(report_text, proposed_spec) {
        Ok(r) => r,
        Err(e) => return fallback(report_text, String::new(), Default::default(), e.to_string()),
    };
    let conversation = Conversation::from_messages(vec![ChatMessage::user(request.clone())])
        .expect("single user message is a valid conversation");

    match complete(&conversation, agent.profile, agent.backend, agent.retry, agent.estimator) {
        Ok(c) if !c.message.content.trim().is_empty() => Feedback {
            text: c.message.content.clone(),
            exchange: Some(PromptAgentExchange {
                request,
                response: Some(c.message.content),
                usage: c.usage,
                error: None,
            }),
            fell_back: false,
        },
        Ok(c) => fallback(report_text, request, c.usage, "prompt agent returned an empty message".into()),
        Err(e) => fallback(report_text, request, Default::default(), e.to_string()),
    }
}

fn fallback(report_text: &str, request: String, usage: crate::llm::Usage, error: String) -> Feedback {
    tracing::warn!(%error, "prompt agent failed; sending generic feedback");
    Feedback {
        text: render_generic_feedback(report_text),
        exchange: Some(PromptAgentExchange { request, response: None, usage, error: Some(error) }),
        fell_back: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::CommandResult;
    use crate::llm::{estimate_tokens, ScriptedBackend};

    fn cex_report() -> AnalyzerReport {
        AnalyzerReport::with_commands(vec![CommandResult::check(0, "NoQuantumObjects", true, Some(0))])
    }

    #[test]
    fn no_feedback_sentence() {
        let f = build_feedback(FeedbackLevel::NoFeedback, &cex_report(), "sig A {}", None).unwrap();
        assert_eq!(f.text, "The proposed specification DID NOT fix the bug.");
    }

    #[test]
    fn generic_feedback_carries_report() {
        let f = build_feedback(FeedbackLevel::GenericFeedback, &cex_report(), "sig A {}", None).unwrap();
        assert!(f.text.starts_with("Below are the results from the Alloy Analyzer."));
        assert!(f.text.ends_with("check NoQuantumObjects: COUNTEREXAMPLE FOUND (expect 0)"));
    }

    #[test]
    fn auto_feedback_returns_prompt_agent_text() {
        let backend = ScriptedBackend::from_responses(["Change X to Y."]);
        let profile = crate::llm::ModelProfile::gpt_4_turbo();
        let retry = RetryPolicy::immediate(0);
        let agent = PromptAgent { backend: &backend, profile: &profile, retry: &retry, estimator: &estimate_tokens };
        let f = build_feedback(FeedbackLevel::AutoFeedback, &cex_report(), "sig A {}", Some(agent)).unwrap();
        assert_eq!(f.text, "Change X to Y.");
        let ex = f.exchange.unwrap();
        assert!(ex.request.contains("check NoQuantumObjects: COUNTEREXAMPLE FOUND"));
        assert!(ex.request.ends_with("After running this Alloy Model is: sig A {}"));
        assert!(!f.fell_back);
    }

    #[test]
    fn auto_feedback_falls_back_to_generic() {
        let backend = ScriptedBackend::default();
        let profile = crate::llm::ModelProfile::gpt_4_turbo();
        let retry = RetryPolicy::immediate(0);
        let agent = PromptAgent { backend: &backend, profile: &profile, retry: &retry, estimator: &estimate_tokens };
        let f = build_feedback(FeedbackLevel::AutoFeedback, &cex_report(), "sig A {}", Some(agent)).unwrap();
        assert!(f.fell_back);
        assert!(f.text.starts_with("Below are the results from the Alloy Analyzer."));
        assert!(f.exchange.unwrap().error.is_some());
    }

    #[test]
    fn prompt_agent_pairing_enforced() {
        assert_eq!(
            build_feedback(FeedbackLevel::AutoFeedback, &cex_report(), "s", None),
            Err(FeedbackError::MissingPromptAgent)
        );
    }
}
