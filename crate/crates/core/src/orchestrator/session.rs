use rust_decimal::Decimal;

use super::{
    build_feedback, AbortedTurn, Anomaly, AnomalyKind, Clock, FailureCategory, FinalStatus, IterationRecord,
    IterationStatus, PromptAgent, RepairSession, Setting, SettingError,
};
use crate::analyzer::{judge, FailureReason, Verdict, Verifier, VerifyError};
use crate::corpus::RepairTask;
use crate::llm::{
    accumulate_cost, complete, truncate_history, ChatMessage, CompletionBackend, Conversation, ModelProfile,
    RetryPolicy, Usage,
};
use crate::protocol::{
    is_repetition, parse_tool_call, render_repair_system_prompt, ParseOutcome, FEEDBACK_REPEATED_SPEC,
    FEEDBACK_TOOL_FALLBACK,
};

/// Everything a session needs besides the task and setting.
pub struct SessionEnv<'a> {
    pub repair_backend: &'a dyn CompletionBackend,
    /// Required for auto-feedback settings, ignored otherwise.
    pub prompt_backend: Option<&'a dyn CompletionBackend>,
    pub verifier: &'a dyn Verifier,
    pub clock: &'a dyn Clock,
    pub retry: RetryPolicy,
    pub estimator: &'a dyn Fn(&str) -> usize,
}

/// Tokens held back from the window for the model's reply.
fn reply_reserve(profile: &ModelProfile) -> usize {
    let window = profile.context_window_tokens as usize;
    (window / 4).min(4096)
}

/// Maps one iteration's evidence onto its status. `verdict` is `None` when
/// the analyzer was not consulted; returns `None` for combinations that
/// cannot occur in a well-formed iteration.
pub fn classify_iteration(parse: &ParseOutcome, repetition: bool, verdict: Option<Verdict>) -> Option<IterationStatus> {
    match (parse, repetition, verdict) {
        (ParseOutcome::Failure { .. }, false, None) => Some(IterationStatus::Failed(FailureCategory::WrongFormat)),
        (ParseOutcome::Parsed { .. }, true, None) => Some(IterationStatus::Failed(FailureCategory::Repetition)),
        (ParseOutcome::Parsed { .. }, false, Some(v)) => match v {
            Verdict::Fixed => Some(IterationStatus::Fixed),
            Verdict::Failed(FailureReason::SyntaxError) => Some(IterationStatus::Failed(FailureCategory::SyntaxError)),
            Verdict::Failed(FailureReason::Counterexample) => {
                Some(IterationStatus::Failed(FailureCategory::Counterexample))
            }
            Verdict::Failed(FailureReason::NoInstance) => Some(IterationStatus::Failed(FailureCategory::NoInstance)),
            Verdict::Failed(FailureReason::Timeout) => None,
        },
        _ => None,
    }
}

struct Stop {
    turn: AbortedTurn,
    anomaly: Option<Anomaly>,
}

/// Runs one task under one setting until it is fixed or the budget is spent.
///
/// Infrastructure failures (transport, analyzer launch or timeout) end the
/// session early as unfixed, with the cause in `error`.
pub fn run_session(task: &RepairTask, setting: &Setting, env: &SessionEnv<'_>) -> Result<RepairSession, SettingError> {
    setting.validate()?;
    let system_prompt = render_repair_system_prompt(setting.budget).expect("budget validated as non-zero");
    let history_budget =
        (setting.repair_profile.context_window_tokens as usize).saturating_sub(reply_reserve(&setting.repair_profile));
    let prompt_agent = match (&setting.prompt_profile, env.prompt_backend) {
        (Some(profile), Some(backend)) => {
            Some(PromptAgent { backend, profile, retry: &env.retry, estimator: env.estimator })
        }
        (Some(_), None) => return Err(SettingError::PromptProfileMismatch(setting.id.clone())),
        (None, _) => None,
    };

    let started = env.clock.now_ms();
    let mut session = RepairSession {
        task_id: task.id.clone(),
        family: task.family.clone(),
        bug_type: task.bug_type,
        setting_id: setting.id.clone(),
        feedback_level: setting.feedback_level,
        budget: setting.budget,
        repair_model: setting.repair_profile.name.clone(),
        prompt_model: setting.prompt_profile.as_ref().map(|p| p.name.clone()),
        system_prompt: system_prompt.clone(),
        initial_prompt: task.clean_text.clone(),
        iterations: Vec::new(),
        final_status: FinalStatus::Unfixed,
        total_usage: Usage::default(),
        total_cost_usd: Decimal::ZERO,
        total_time_ms: 0,
        aborted_turn: None,
        anomalies: Vec::new(),
        error: None,
    };

    let mut conversation = Conversation::new();
    conversation.push(ChatMessage::system(system_prompt)).expect("system prefix");
    if let Err(e) = conversation.push(ChatMessage::user(task.clean_text.clone())) {
        session.error = Some(format!("cannot start conversation: {e}"));
        return Ok(finish(session, setting, env, started));
    }

    let mut pending_feedback: Option<String> = None;
    for index in 1..=setting.budget {
        let turn_started = env.clock.now_ms();
        let feedback_sent = pending_feedback.take();
        if let Some(text) = &feedback_sent {
            conversation
                .push(ChatMessage::user(text.clone()))
                .expect("feedback follows an assistant turn and is non-empty");
        }

        let abort = |reason: String, usage: Usage, raw: Option<String>, spec: Option<String>, invoked: bool| {
            Box::new(Stop {
                turn: AbortedTurn {
                    index,
                    raw_response: raw,
                    proposed_spec: spec,
                    verifier_invoked: invoked,
                    usage,
                    reason,
                },
                anomaly: None,
            })
        };

        let outcome = (|| -> Result<IterationRecord, Box<Stop>> {
            let window = truncate_history(&conversation, history_budget, env.estimator)
                .map_err(|e| abort(e.to_string(), Usage::default(), None, None, false))?;
            let completion = complete(&window, &setting.repair_profile, env.repair_backend, &env.retry, env.estimator)
                .map_err(|e| abort(e.to_string(), Usage::default(), None, None, false))?;
            let raw = completion.message.content.clone();
            let usage = completion.usage;

            let parse = parse_tool_call(&raw);
            let mut record = IterationRecord {
                index,
                feedback_sent: feedback_sent.clone(),
                raw_response: raw.clone(),
                parse_via: parse.via(),
                proposed_spec: parse.call().map(|c| c.specification.clone()),
                analyzer_report: None,
                status: IterationStatus::Failed(FailureCategory::WrongFormat),
                usage,
                wall_time_ms: 0,
                prompt_agent: None,
            };

            let Some(call) = parse.call() else {
                record.status = classify_iteration(&parse, false, None).expect("wrong format");
                return Ok(record);
            };
            if is_repetition(&call.specification, &task.clean_text) {
                record.status = classify_iteration(&parse, true, None).expect("repetition");
                return Ok(record);
            }

            let report = match env.verifier.verify(&call.specification) {
                Ok(report) => report,
                Err(e) => {
                    let mut stop = abort(e.to_string(), usage, Some(raw), Some(call.specification.clone()), true);
                    if let VerifyError::Timeout(_) = e {
                        stop.anomaly = Some(Anomaly {
                            iteration: index,
                            kind: AnomalyKind::VerifierTimeout,
                            detail: e.to_string(),
                        });
                    }
                    return Err(stop);
                }
            };
            let verdict = judge(&report);
            record.status = classify_iteration(&parse, false, Some(verdict)).ok_or_else(|| {
                abort(format!("unclassifiable verdict {verdict:?}"), usage, Some(raw.clone()), None, true)
            })?;
            record.analyzer_report = Some(report);
            Ok(record)
        })();

        let mut record = match outcome {
            Ok(r) => r,
            Err(stop) => {
                tracing::warn!(task = %task.id, setting = %setting.id, iteration = index, reason = %stop.turn.reason, "session aborted");
                session.error = Some(stop.turn.reason.clone());
                session.anomalies.extend(stop.anomaly);
                session.aborted_turn = Some(stop.turn);
                break;
            }
        };
        conversation.push(ChatMessage::assistant(record.raw_response.clone())).expect("assistant follows user");

        let fixed = record.status == IterationStatus::Fixed;
        if !fixed && index < setting.budget {
            let text = match record.status {
                IterationStatus::Failed(FailureCategory::WrongFormat) => FEEDBACK_TOOL_FALLBACK.to_string(),
                IterationStatus::Failed(FailureCategory::Repetition) => FEEDBACK_REPEATED_SPEC.to_string(),
                _ => {
                    let report = record.analyzer_report.as_ref().expect("analyzer failure has a report");
                    let spec = record.proposed_spec.as_deref().expect("analyzer failure has a spec");
                    let fb = build_feedback(setting.feedback_level, report, spec, prompt_agent)
                        .expect("prompt agent presence checked above");
                    if fb.fell_back {
                        let detail = fb.exchange.as_ref().and_then(|x| x.error.clone()).unwrap_or_default();
                        session.anomalies.push(Anomaly {
                            iteration: index,
                            kind: AnomalyKind::PromptAgentFallback,
                            detail,
                        });
                    }
                    record.prompt_agent = fb.exchange;
                    fb.text
                }
            };
            pending_feedback = Some(text);
        }
        record.wall_time_ms = env.clock.now_ms().saturating_sub(turn_started);
        tracing::debug!(task = %task.id, iteration = index, status = %record.status, "iteration done");
        session.iterations.push(record);

        if fixed {
            session.final_status = FinalStatus::Fixed { at_iteration: index };
            break;
        }
    }

    Ok(finish(session, setting, env, started))
}

fn finish(mut session: RepairSession, setting: &Setting, env: &SessionEnv<'_>, started: u64) -> RepairSession {
    let repair_usage: Usage = session.iterations.iter().map(|i| i.usage).sum::<Usage>()
        + session.aborted_turn.as_ref().map_or_else(Usage::default, |t| t.usage);
    let prompt_usage: Usage = session.iterations.iter().filter_map(|i| i.prompt_agent.as_ref()).map(|p| p.usage).sum();
    session.total_usage = repair_usage + prompt_usage;
    session.total_cost_usd = accumulate_cost(repair_usage, &setting.repair_profile)
        + setting.prompt_profile.as_ref().map_or(Decimal::ZERO, |p| accumulate_cost(prompt_usage, p));
    session.total_cost_usd = session.total_cost_usd.normalize();
    session.total_time_ms = env.clock.now_ms().saturating_sub(started);
    session
}
