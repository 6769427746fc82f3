//! Subprocess driver for the headless Alloy runner.
//!
//! The runner is invoked as `<runner_cmd> <file.als>` and prints one JSON
//! record per line: a `meta` record first, then either a single `error` record
//! or one `result` record per command in declaration order.
//!
//! ```text
//! {"kind":"meta","version":"6.1.0","solver":"sat4j"}
//! {"kind":"result","index":0,"cmd":"run","label":"solvePuzzle","outcome":"SAT","expect":1}
//! {"kind":"result","index":1,"cmd":"check","label":"NoQuantumObjects","outcome":"SAT","expect":0}
//! ```

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;
use wait_timeout::ChildExt;

use super::report::{AnalyzerReport, CommandKind, CommandResult, CompileError, Outcome, RunnerMeta};
use super::{Verifier, VerifyError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const CANDIDATE_FILE: &str = "candidate.als";
const STDERR_EXCERPT: usize = 500;

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Meta { version: String, solver: String },
    Result { index: u32, cmd: String, label: String, outcome: String, expect: Option<i64> },
    Error { message: String, line: u32, col: u32 },
}

/// Parses runner stdout into a report (with `wall_time_ms` left at zero).
pub fn parse_runner_output(stdout: &str) -> Result<AnalyzerReport, VerifyError> {
    let protocol = |msg: String| VerifyError::Protocol(msg);
    let mut lines = stdout.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, first) = lines.next().ok_or_else(|| protocol("runner produced no output".into()))?;
    let meta = match serde_json::from_str::<Record>(first) {
        Ok(Record::Meta { version, solver }) => RunnerMeta { version, solver },
        Ok(_) => return Err(protocol("first record must be `meta`".into())),
        Err(e) => return Err(protocol(format!("line 1: {e}"))),
    };

    let mut report = AnalyzerReport::with_commands(Vec::new());
    report.runner = Some(meta);
    for (n, line) in lines {
        let record: Record = serde_json::from_str(line).map_err(|e| protocol(format!("line {}: {e}", n + 1)))?;
        match record {
            Record::Meta { .. } => return Err(protocol(format!("line {}: duplicate `meta` record", n + 1))),
            Record::Error { message, line, col } => {
                if !report.compiled || !report.commands.is_empty() {
                    return Err(protocol(format!("line {}: `error` after other records", n + 1)));
                }
                report.compiled = false;
                report.error = Some(CompileError { message, line, column: col });
            }
            Record::Result { index, cmd, label, outcome, expect } => {
                if !report.compiled {
                    return Err(protocol(format!("line {}: record after `error`", n + 1)));
                }
                if index as usize != report.commands.len() {
                    return Err(protocol(format!(
                        "line {}: expected command index {}, got {index}",
                        n + 1,
                        report.commands.len()
                    )));
                }
                let kind = match cmd.as_str() {
                    "check" => CommandKind::Check,
                    "run" => CommandKind::Run,
                    other => return Err(protocol(format!("line {}: unknown command `{other}`", n + 1))),
                };
                let sat = match outcome.as_str() {
                    "SAT" => true,
                    "UNSAT" => false,
                    other => return Err(protocol(format!("line {}: unknown outcome `{other}`", n + 1))),
                };
                report.commands.push(CommandResult {
                    index,
                    kind,
                    label,
                    outcome: Outcome::from_sat(kind, sat),
                    expect,
                });
            }
        }
    }
    Ok(report)
}

/// Runs an external runner command on each candidate in a fresh temp directory.
#[derive(Debug, Clone)]
pub struct RunnerVerifier {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    work_dir: Option<PathBuf>,
}

impl RunnerVerifier {
    /// `command` is split shell-style, e.g. `java -jar alloy-runner.jar`.
    pub fn new(command: &str) -> Result<Self, VerifyError> {
        let mut parts = shlex::split(command)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| VerifyError::LaunchFailure(format!("cannot parse runner command `{command}`")))?
            .into_iter();
        let program = parts.next().ok_or_else(|| VerifyError::LaunchFailure("empty runner command".into()))?;
        Ok(Self { program, args: parts.collect(), timeout: DEFAULT_TIMEOUT, work_dir: None })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Parent directory for the per-call temp directories.
    pub fn with_work_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.work_dir = Some(dir.into());
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn run_on(&self, path: &Path) -> Result<(String, u64), VerifyError> {
        let started = Instant::now();
        let mut command = Command::new(&self.program);
        command.args(&self.args).arg(path).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
        // Own process group, so a timeout also takes down anything the runner spawned.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut command, 0);
        let mut child = command.spawn().map_err(|e| VerifyError::LaunchFailure(format!("{}: {e}", self.program)))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                kill_tree(&mut child);
                let _ = child.wait();
                let _ = out_reader.join();
                let _ = err_reader.join();
                return Err(VerifyError::Timeout(self.timeout));
            }
            Err(e) => {
                kill_tree(&mut child);
                let _ = child.wait();
                return Err(VerifyError::LaunchFailure(e.to_string()));
            }
        };
        let elapsed = started.elapsed().as_millis() as u64;
        let stdout = out_reader
            .join()
            .map_err(|_| VerifyError::Protocol("stdout reader panicked".into()))?
            .map_err(|e| VerifyError::Protocol(e.to_string()))?;
        let stderr = err_reader.join().unwrap_or_default();

        if !status.success() {
            let diag: String = String::from_utf8_lossy(&stderr).chars().take(STDERR_EXCERPT).collect();
            return Err(VerifyError::LaunchFailure(format!("runner exited with {status}: {}", diag.trim())));
        }
        let stdout = String::from_utf8(stdout).map_err(|_| VerifyError::Protocol("stdout is not UTF-8".into()))?;
        Ok((stdout, elapsed))
    }
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

impl Verifier for RunnerVerifier {
    fn verify(&self, spec_text: &str) -> Result<AnalyzerReport, VerifyError> {
        if spec_text.trim().is_empty() {
            return Err(VerifyError::EmptySpecification);
        }
        let mut builder = tempfile::Builder::new();
        builder.prefix("alloy-repair-");
        let dir = match &self.work_dir {
            Some(parent) => builder.tempdir_in(parent),
            None => builder.tempdir(),
        }
        .map_err(|e| VerifyError::Io(e.to_string()))?;

        let path = dir.path().join(CANDIDATE_FILE);
        std::fs::write(&path, spec_text).map_err(|e| VerifyError::Io(e.to_string()))?;
        let (stdout, elapsed) = self.run_on(&path)?;
        let mut report = parse_runner_output(&stdout)?;
        report.wall_time_ms = elapsed;
        Ok(report)
    }
}
