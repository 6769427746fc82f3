//! Fixed prompt and feedback texts. The templates are embedded verbatim; only
//! the trial count and the prompt-agent slots are ever substituted.

use thiserror::Error;

const BUDGET_SLOT: &str = "{budget}";
const REPORT_SLOT: &str = "{Alloy_report_msg}";
const SPEC_SLOT: &str = "{proposed_spec}";

const REPAIR_AGENT_TEMPLATE: &str = include_str!("../../prompts/repair_agent_instruction.txt");
pub const TOOL_INSTRUCTION: &str = include_str!("../../prompts/tool_instruction.txt");
const PROMPT_AGENT_TEMPLATE: &str = include_str!("../../prompts/prompt_agent_instruction.txt");

pub const FEEDBACK_TOOL_FALLBACK: &str = include_str!("../../prompts/feedback_tool_fallback.txt");
pub const FEEDBACK_REPEATED_SPEC: &str = include_str!("../../prompts/feedback_repeated_spec.txt");
pub const FEEDBACK_NO_FEEDBACK: &str = include_str!("../../prompts/feedback_no_feedback.txt");
pub const FEEDBACK_GENERIC_PREAMBLE: &str = include_str!("../../prompts/feedback_generic.txt");

/// Name of the single tool the repair agent may call.
pub const TOOL_NAME: &str = "run_alloy_analyzer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("trial budget must be at least 1")]
    ZeroBudget,
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

pub fn render_repair_agent_instruction(budget: u32) -> Result<String, PromptError> {
    if budget == 0 {
        return Err(PromptError::ZeroBudget);
    }
    Ok(REPAIR_AGENT_TEMPLATE.replacen(BUDGET_SLOT, &budget.to_string(), 1))
}

/// The repair agent's system message: agent instruction, then tool instruction.
pub fn render_repair_system_prompt(budget: u32) -> Result<String, PromptError> {
    let mut text = render_repair_agent_instruction(budget)?;
    text.push_str("\n\n");
    text.push_str(TOOL_INSTRUCTION);
    Ok(text)
}

/// Fills the prompt-agent template. Substitution is single pass, so slot
/// markers appearing inside the inputs are left alone.
pub fn render_prompt_agent_request(report_text: &str, proposed_spec: &str) -> Result<String, PromptError> {
    if report_text.is_empty() {
        return Err(PromptError::EmptyInput("analyzer report"));
    }
    if proposed_spec.is_empty() {
        return Err(PromptError::EmptyInput("proposed specification"));
    }
    let (head, rest) = PROMPT_AGENT_TEMPLATE.split_once(REPORT_SLOT).expect("prompt agent template has a report slot");
    let (middle, tail) = rest.split_once(SPEC_SLOT).expect("prompt agent template has a spec slot");

    let mut out = String::with_capacity(PROMPT_AGENT_TEMPLATE.len() + report_text.len() + proposed_spec.len());
    out.push_str(head);
    out.push_str(report_text);
    out.push_str(middle);
    out.push_str(proposed_spec);
    out.push_str(tail);
    Ok(out)
}

/// Generic-feedback message: the fixed preamble followed by the rendered report.
pub fn render_generic_feedback(report_text: &str) -> String {
    format!("{FEEDBACK_GENERIC_PREAMBLE}\n{report_text}")
}
