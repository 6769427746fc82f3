use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    Check,
    Run,
}

impl CommandKind {
    pub fn keyword(self) -> &'static str {
        match self {
            CommandKind::Check => "check",
            CommandKind::Run => "run",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    CounterexampleFound,
    NoCounterexample,
    InstanceFound,
    NoInstance,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::CounterexampleFound => "COUNTEREXAMPLE FOUND",
            Outcome::NoCounterexample => "NO COUNTEREXAMPLE",
            Outcome::InstanceFound => "INSTANCE FOUND",
            Outcome::NoInstance => "NO INSTANCE",
        }
    }

    /// Maps a solver result onto the command's meaning. Checks search for
    /// counterexamples, runs for instances, so SAT means opposite things.
    pub fn from_sat(kind: CommandKind, sat: bool) -> Self {
        match (kind, sat) {
            (CommandKind::Check, true) => Outcome::CounterexampleFound,
            (CommandKind::Check, false) => Outcome::NoCounterexample,
            (CommandKind::Run, true) => Outcome::InstanceFound,
            (CommandKind::Run, false) => Outcome::NoInstance,
        }
    }

    pub fn kind(self) -> CommandKind {
        match self {
            Outcome::CounterexampleFound | Outcome::NoCounterexample => CommandKind::Check,
            Outcome::InstanceFound | Outcome::NoInstance => CommandKind::Run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResult {
    pub index: u32,
    pub kind: CommandKind,
    pub label: String,
    pub outcome: Outcome,
    pub expect: Option<i64>,
}

impl CommandResult {
    pub fn check(index: u32, label: &str, counterexample: bool, expect: Option<i64>) -> Self {
        Self {
            index,
            kind: CommandKind::Check,
            label: label.to_string(),
            outcome: Outcome::from_sat(CommandKind::Check, counterexample),
            expect,
        }
    }

    pub fn run(index: u32, label: &str, instance: bool, expect: Option<i64>) -> Self {
        Self {
            index,
            kind: CommandKind::Run,
            label: label.to_string(),
            outcome: Outcome::from_sat(CommandKind::Run, instance),
            expect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileError {
    pub message: String,
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerMeta {
    pub version: String,
    pub solver: String,
}

/// Everything the analyzer said about one candidate specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerReport {
    pub compiled: bool,
    pub error: Option<CompileError>,
    pub commands: Vec<CommandResult>,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runner: Option<RunnerMeta>,
}

impl AnalyzerReport {
    pub fn compile_error(message: &str, line: u32, column: u32) -> Self {
        Self {
            compiled: false,
            error: Some(CompileError { message: message.to_string(), line, column }),
            commands: Vec::new(),
            wall_time_ms: 0,
            runner: None,
        }
    }

    pub fn with_commands(commands: Vec<CommandResult>) -> Self {
        Self { compiled: true, error: None, commands, wall_time_ms: 0, runner: None }
    }

    /// Checks the compiled/error/commands consistency rules.
    pub fn is_well_formed(&self) -> bool {
        let shape = if self.compiled { self.error.is_none() } else { self.error.is_some() && self.commands.is_empty() };
        shape && self.commands.iter().all(|c| c.outcome.kind() == c.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    SyntaxError,
    Counterexample,
    NoInstance,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Fixed,
    Failed(FailureReason),
}

/// Fixed iff the spec compiled, every check is counterexample-free and every
/// run found an instance. Failures are reported by priority:
/// syntax error, then counterexample, then missing instance.
pub fn judge(report: &AnalyzerReport) -> Verdict {
    if !report.compiled {
        return Verdict::Failed(FailureReason::SyntaxError);
    }
    let has = |o: Outcome| report.commands.iter().any(|c| c.outcome == o);
    if has(Outcome::CounterexampleFound) {
        Verdict::Failed(FailureReason::Counterexample)
    } else if has(Outcome::NoInstance) {
        Verdict::Failed(FailureReason::NoInstance)
    } else {
        Verdict::Fixed
    }
}

pub const REPORT_TEXT_LIMIT: usize = 4_000;
pub const TRUNCATION_MARKER: &str = "\n[report truncated]";

/// Line-oriented summary forwarded to the model as generic feedback.
pub fn render_report_text(report: &AnalyzerReport) -> String {
    let mut text = String::new();
    if let Some(err) = &report.error {
        let _ = write!(text, "ERROR line {} col {}: {}", err.line, err.column, err.message);
    } else if report.commands.is_empty() {
        text.push_str("no commands executed");
    } else {
        for (i, cmd) in report.commands.iter().enumerate() {
            if i > 0 {
                text.push('\n');
            }
            let _ = write!(text, "{} {}: {}", cmd.kind.keyword(), cmd.label, cmd.outcome.label());
            if let Some(expect) = cmd.expect {
                let _ = write!(text, " (expect {expect})");
            }
        }
    }
    truncate_report(text)
}

fn truncate_report(text: String) -> String {
    if text.chars().count() <= REPORT_TEXT_LIMIT {
        return text;
    }
    let keep = REPORT_TEXT_LIMIT - TRUNCATION_MARKER.chars().count();
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_when_all_checks_hold_and_runs_have_instances() {
        let r = AnalyzerReport::with_commands(vec![
            CommandResult::check(0, "A", false, Some(0)),
            CommandResult::run(1, "p", true, Some(1)),
        ]);
        assert_eq!(judge(&r), Verdict::Fixed);
    }

    #[test]
    fn counterexample_fails() {
        let r = AnalyzerReport::with_commands(vec![CommandResult::check(0, "A", true, None)]);
        assert_eq!(judge(&r), Verdict::Failed(FailureReason::Counterexample));
    }

    #[test]
    fn syntax_error_fails() {
        assert_eq!(
            judge(&AnalyzerReport::compile_error("Syntax error", 3, 1)),
            Verdict::Failed(FailureReason::SyntaxError)
        );
    }

    #[test]
    fn priority_counterexample_over_no_instance() {
        let r = AnalyzerReport::with_commands(vec![
            CommandResult::run(0, "p", false, None),
            CommandResult::check(1, "A", true, None),
        ]);
        assert_eq!(judge(&r), Verdict::Failed(FailureReason::Counterexample));
        let r = AnalyzerReport::with_commands(vec![CommandResult::run(0, "p", false, None)]);
        assert_eq!(judge(&r), Verdict::Failed(FailureReason::NoInstance));
    }

    #[test]
    fn no_commands_counts_as_fixed() {
        assert_eq!(judge(&AnalyzerReport::with_commands(vec![])), Verdict::Fixed);
    }

    #[test]
    fn render_formats() {
        let r = AnalyzerReport::with_commands(vec![
            CommandResult::run(0, "solvePuzzle", true, Some(1)),
            CommandResult::check(1, "NoQuantumObjects", true, Some(0)),
        ]);
        assert_eq!(
            render_report_text(&r),
            "run solvePuzzle: INSTANCE FOUND (expect 1)\ncheck NoQuantumObjects: COUNTEREXAMPLE FOUND (expect 0)"
        );
        assert_eq!(
            render_report_text(&AnalyzerReport::compile_error("Syntax error", 3, 1)),
            "ERROR line 3 col 1: Syntax error"
        );
        assert_eq!(render_report_text(&AnalyzerReport::with_commands(vec![])), "no commands executed");
        let no_expect = AnalyzerReport::with_commands(vec![CommandResult::check(0, "A", false, None)]);
        assert_eq!(render_report_text(&no_expect), "check A: NO COUNTEREXAMPLE");
    }

    #[test]
    fn render_is_bounded() {
        let cmds = (0..500).map(|i| CommandResult::check(i, &format!("assertion_{i}"), i % 2 == 0, Some(0))).collect();
        let text = render_report_text(&AnalyzerReport::with_commands(cmds));
        assert_eq!(text.chars().count(), REPORT_TEXT_LIMIT);
        assert!(text.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn well_formedness() {
        assert!(AnalyzerReport::compile_error("x", 1, 1).is_well_formed());
        let mut bad = AnalyzerReport::with_commands(vec![CommandResult::check(0, "A", true, None)]);
        bad.commands[0].kind = CommandKind::Run;
        assert!(!bad.is_well_formed());
        bad = AnalyzerReport::compile_error("x", 1, 1);
        bad.compiled = true;
        assert!(!bad.is_well_formed());
    }
}
