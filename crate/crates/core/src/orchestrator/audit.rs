use rust_decimal::Decimal;

use super::{FailureCategory, FeedbackLevel, FinalStatus, IterationRecord, IterationStatus, RepairSession, Setting};
use crate::analyzer::{judge, render_report_text, FailureReason, Verdict};
use crate::llm::{accumulate_cost, Usage};
use crate::protocol::{
    render_generic_feedback, render_prompt_agent_request, FEEDBACK_NO_FEEDBACK, FEEDBACK_REPEATED_SPEC,
    FEEDBACK_TOOL_FALLBACK,
};

/// Re-checks a finished session against the loop's invariants. Returns one
/// message per violation; an empty list means the session is consistent.
pub fn audit_session(session: &RepairSession, setting: &Setting) -> Vec<String> {
    let mut v = Vec::new();
    let n = session.iterations.len();

    if n > setting.budget as usize {
        v.push(format!("{n} iterations exceed the budget of {}", setting.budget));
    }
    for (i, it) in session.iterations.iter().enumerate() {
        if it.index as usize != i + 1 {
            v.push(format!("iteration #{} has index {}", i + 1, it.index));
        }
        if it.status == IterationStatus::Fixed && i + 1 != n {
            v.push(format!("iteration {} is Fixed but not last", it.index));
        }
        check_record(it, &mut v);
    }

    let last_fixed = session.iterations.last().is_some_and(|it| it.status == IterationStatus::Fixed);
    match session.final_status {
        FinalStatus::Fixed { at_iteration } if !last_fixed || at_iteration as usize != n => {
            v.push(format!("final status Fixed at {at_iteration} disagrees with the iteration log"))
        }
        FinalStatus::Unfixed if last_fixed => v.push("final status Unfixed but last iteration is Fixed".into()),
        FinalStatus::Unfixed if session.aborted_turn.is_none() && n != setting.budget as usize => {
            v.push(format!("unfixed session stopped after {n} of {} iterations without an abort", setting.budget))
        }
        _ => {}
    }

    for pair in session.iterations.windows(2) {
        check_feedback(&pair[0], &pair[1], setting.feedback_level, &mut v);
    }
    if let Some(first) = session.iterations.first() {
        if first.feedback_sent.is_some() {
            v.push("iteration 1 carries feedback".into());
        }
    }
    if let Some(last) = session.iterations.last() {
        if last.prompt_agent.is_some() && session.aborted_turn.is_none() {
            v.push(format!("prompt agent consulted after final iteration {}", last.index));
        }
    }

    let repair: Usage = session.iterations.iter().map(|i| i.usage).sum::<Usage>()
        + session.aborted_turn.as_ref().map_or_else(Usage::default, |t| t.usage);
    let prompt: Usage = session.iterations.iter().filter_map(|i| i.prompt_agent.as_ref()).map(|p| p.usage).sum();
    if session.total_usage != repair + prompt {
        v.push(format!("total usage {:?} != sum of turns {:?}", session.total_usage, repair + prompt));
    }
    let cost = accumulate_cost(repair, &setting.repair_profile)
        + setting.prompt_profile.as_ref().map_or(Decimal::ZERO, |p| accumulate_cost(prompt, p));
    if session.total_cost_usd != cost {
        v.push(format!("total cost {} != recomputed {}", session.total_cost_usd, cost));
    }
    v
}

fn check_record(it: &IterationRecord, v: &mut Vec<String>) {
    let idx = it.index;
    match it.status {
        IterationStatus::Failed(FailureCategory::WrongFormat) => {
            if it.proposed_spec.is_some() || it.analyzer_report.is_some() {
                v.push(format!("iteration {idx}: WrongFormat with a parsed spec or report"));
            }
        }
        IterationStatus::Failed(FailureCategory::Repetition) => {
            if it.proposed_spec.is_none() || it.analyzer_report.is_some() {
                v.push(format!("iteration {idx}: Repetition must have a spec and no analyzer call"));
            }
        }
        status => {
            let expected = match status {
                IterationStatus::Fixed => Verdict::Fixed,
                IterationStatus::Failed(FailureCategory::SyntaxError) => Verdict::Failed(FailureReason::SyntaxError),
                IterationStatus::Failed(FailureCategory::Counterexample) => {
                    Verdict::Failed(FailureReason::Counterexample)
                }
                _ => Verdict::Failed(FailureReason::NoInstance),
            };
            match &it.analyzer_report {
                Some(r) if judge(r) == expected => {}
                Some(r) => v.push(format!("iteration {idx}: status {status} but report judges {:?}", judge(r))),
                None => v.push(format!("iteration {idx}: status {status} without an analyzer report")),
            }
            if it.proposed_spec.is_none() {
                v.push(format!("iteration {idx}: analyzer status without a spec"));
            }
        }
    }
}

fn check_feedback(prev: &IterationRecord, next: &IterationRecord, level: FeedbackLevel, v: &mut Vec<String>) {
    let Some(sent) = next.feedback_sent.as_deref() else {
        v.push(format!("iteration {} has no feedback", next.index));
        return;
    };
    let expected: Option<String> = match prev.status {
        IterationStatus::Fixed => None,
        IterationStatus::Failed(FailureCategory::WrongFormat) => Some(FEEDBACK_TOOL_FALLBACK.into()),
        IterationStatus::Failed(FailureCategory::Repetition) => Some(FEEDBACK_REPEATED_SPEC.into()),
        IterationStatus::Failed(_) => {
            let Some(report) = &prev.analyzer_report else { return };
            let report_text = render_report_text(report);
            let generic = render_generic_feedback(&report_text);
            match level {
                FeedbackLevel::NoFeedback => Some(FEEDBACK_NO_FEEDBACK.into()),
                FeedbackLevel::GenericFeedback => Some(generic),
                FeedbackLevel::AutoFeedback => match &prev.prompt_agent {
                    None => {
                        v.push(format!("iteration {}: auto-feedback without a prompt agent exchange", prev.index));
                        return;
                    }
                    Some(ex) => {
                        let spec = prev.proposed_spec.as_deref().unwrap_or_default();
                        if render_prompt_agent_request(&report_text, spec).ok().as_deref() != Some(ex.request.as_str())
                        {
                            v.push(format!("iteration {}: prompt agent request does not match the report", prev.index));
                        }
                        Some(ex.response.clone().unwrap_or(generic))
                    }
                },
            }
        }
    };
    if expected.as_deref() != Some(sent) {
        v.push(format!("iteration {}: feedback does not follow from iteration {}", next.index, prev.index));
    }
}
