//! Command implementations behind the `alloy-repair` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use alloy_repair::analyzer::{RunnerVerifier, Verifier, VerifyError};
use alloy_repair::corpus::{load_suite_dir, BenchmarkSuite, BugType, CorpusError, RepairTask, GROUND_TRUTH_DIR};
use alloy_repair::eval::{emit_reports, EvalError, EvalInputs, Reference, SuiteResult};
use alloy_repair::llm::{
    estimate_tokens, CompletionBackend, HttpBackend, RetryPolicy, ScriptAgent, ScriptError, ScriptedProgram,
    API_KEY_ENV,
};
use alloy_repair::orchestrator::{
    load_traces, read_trace, run_session, trace_path, write_trace, Clock, FrozenClock, RepairSession, SessionEnv,
    Setting, SystemClock, TraceError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendMode, ConfigError, Overrides, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Verifier(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no suite given (use --suite or `suite` in the config)")]
    NoSuite,
    #[error("no analyzer runner given (use --runner or `runner` in the config)")]
    NoRunner,
    #[error("no traces under {0}")]
    NoTraces(PathBuf),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub family: String,
    pub bug_type: BugType,
    pub ground_truth: bool,
}

/// Written next to a preprocessed suite. Once annotations are stripped the
/// bug type can no longer be recovered from the files, so it is kept here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub suite: String,
    pub tasks: usize,
    pub bug_types: BTreeMap<BugType, usize>,
    pub families: BTreeMap<String, usize>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn of(suite: &BenchmarkSuite) -> Self {
        let mut bug_types = BTreeMap::new();
        let mut families = BTreeMap::new();
        for t in &suite.tasks {
            *bug_types.entry(t.bug_type).or_default() += 1;
            *families.entry(t.family.clone()).or_default() += 1;
        }
        Manifest {
            suite: suite.name.clone(),
            tasks: suite.tasks.len(),
            bug_types,
            families,
            entries: suite
                .tasks
                .iter()
                .map(|t| ManifestEntry {
                    id: t.id.clone(),
                    family: t.family.clone(),
                    bug_type: t.bug_type,
                    ground_truth: t.ground_truth.is_some(),
                })
                .collect(),
        }
    }

    pub fn count(&self, bug_type: BugType) -> usize {
        self.bug_types.get(&bug_type).copied().unwrap_or(0)
    }

    /// One-line summary, e.g. `38 tasks: 28 single-line, 10 multi-line, 0 unannotated`.
    pub fn describe(&self) -> String {
        format!(
            "{} tasks: {} single-line, {} multi-line, {} unannotated",
            self.tasks,
            self.count(BugType::SingleLine),
            self.count(BugType::MultiLine),
            self.count(BugType::Unannotated)
        )
    }
}

fn suite_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "suite".into())
}

/// Loads a suite directory, raw or preprocessed. Bug types recorded in a
/// manifest take precedence over re-classifying the (already stripped) files.
pub fn load_tasks(dir: &Path) -> Result<BenchmarkSuite, CliError> {
    let mut suite = load_suite_dir(dir, &suite_name(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", manifest_path.display())))?;
        let known: BTreeMap<&str, BugType> = manifest.entries.iter().map(|e| (e.id.as_str(), e.bug_type)).collect();
        for t in &mut suite.tasks {
            if let Some(&b) = known.get(t.id.as_str()) {
                t.bug_type = b;
            }
        }
        suite.name = manifest.suite;
    }
    Ok(suite)
}

/// Strips fix annotations from every task in `suite_dir` and writes the
/// clean files, the ground truths and a manifest into `out_dir`.
pub fn cmd_preprocess(suite_dir: &Path, out_dir: &Path) -> Result<Manifest, CliError> {
    let suite = load_tasks(suite_dir)?;
    let expected = out_dir.join(GROUND_TRUTH_DIR);
    fs::create_dir_all(&expected).map_err(io_err(&expected))?;
    for t in &suite.tasks {
        let file = format!("{}.als", t.id);
        let path = out_dir.join(&file);
        fs::write(&path, &t.clean_text).map_err(io_err(&path))?;
        if let Some(truth) = &t.ground_truth {
            let path = expected.join(&file);
            fs::write(&path, truth).map_err(io_err(&path))?;
        }
    }
    let manifest = Manifest::of(&suite);
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Where model responses come from.
pub enum Backends {
    Live(HttpBackend),
    /// A single program replayed for every session.
    ScriptFile(ScriptedProgram),
    /// `<dir>/<setting>/<task>.jsonl`, falling back to `<dir>/<task>.jsonl`.
    ScriptDir(PathBuf),
}

impl Backends {
    pub fn resolve(config: &RunConfig) -> Result<Self, CliError> {
        match &config.backend {
            BackendMode::Live => HttpBackend::from_env(config.endpoint.clone(), HTTP_TIMEOUT)
                .map(Backends::Live)
                .map_err(|e| CliError::Backend(e.to_string())),
            BackendMode::Scripted(path) => {
                if std::env::var_os(API_KEY_ENV).is_some() {
                    tracing::warn!("{API_KEY_ENV} is set but ignored by the scripted backend");
                }
                if path.is_dir() {
                    Ok(Backends::ScriptDir(path.clone()))
                } else {
                    Ok(Backends::ScriptFile(ScriptedProgram::load(path)?))
                }
            }
        }
    }

    fn program(&self, setting: &str, task: &str) -> Result<Option<ScriptedProgram>, CliError> {
        match self {
            Backends::Live(_) => Ok(None),
            Backends::ScriptFile(p) => Ok(Some(p.clone())),
            Backends::ScriptDir(dir) => {
                let specific = dir.join(setting).join(format!("{task}.jsonl"));
                let shared = dir.join(format!("{task}.jsonl"));
                let path = if specific.is_file() { specific } else { shared };
                if !path.is_file() {
                    return Err(CliError::Other(format!("no script for {setting}/{task} under {}", dir.display())));
                }
                Ok(Some(ScriptedProgram::load(&path)?))
            }
        }
    }

    /// Runs one session with the right backend pair and clock.
    pub fn run(
        &self,
        task: &RepairTask,
        setting: &Setting,
        verifier: &dyn Verifier,
    ) -> Result<RepairSession, CliError> {
        let auto = setting.prompt_profile.is_some();
        let retry = RetryPolicy::default();
        let session = match self.program(&setting.id, &task.id)? {
            None => {
                let Backends::Live(http) = self else { unreachable!("only live backends have no program") };
                let clock = SystemClock::default();
                let env = SessionEnv {
                    repair_backend: http,
                    prompt_backend: auto.then_some(http as &dyn CompletionBackend),
                    verifier,
                    clock: &clock,
                    retry,
                    estimator: &estimate_tokens,
                };
                run_session(task, setting, &env)
            }
            Some(program) => {
                let repair = program.backend(ScriptAgent::Repair);
                let prompt = program.backend(ScriptAgent::Prompt);
                let env = SessionEnv {
                    repair_backend: &repair,
                    prompt_backend: auto.then_some(&prompt as &dyn CompletionBackend),
                    verifier,
                    clock: &FrozenClock as &dyn Clock,
                    retry: RetryPolicy::immediate(0),
                    estimator: &estimate_tokens,
                };
                run_session(task, setting, &env)
            }
        };
        session.map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))
    }
}

pub fn runner_verifier(config: &RunConfig) -> Result<RunnerVerifier, CliError> {
    let command = config.runner.as_deref().ok_or(CliError::NoRunner)?;
    Ok(RunnerVerifier::new(command)?.with_timeout(Duration::from_secs(config.runner_timeout_secs)))
}

/// Repairs a single file under one setting. The trace goes to the configured out directory.
pub fn cmd_repair(config: &RunConfig, file: &Path, setting_id: &str) -> Result<RepairSession, CliError> {
    let setting = config.setting(setting_id)?;
    let verifier = runner_verifier(config)?;
    let backends = Backends::resolve(config)?;
    let text = fs::read_to_string(file).map_err(io_err(file))?;
    let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "task".into());
    let task = RepairTask::from_source(id, text, None);
    let session = backends.run(&task, setting, &verifier)?;
    write_trace(&config.out, &session)?;
    Ok(session)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BenchOutcome {
    pub ran: usize,
    /// Sessions left alone because a clean trace already existed.
    pub skipped: usize,
    /// `setting/task` pairs that hit an infrastructure problem.
    pub infra_failures: Vec<String>,
    pub reports: Vec<PathBuf>,
}

/// Runs every (setting, task) pair not already traced, then writes reports.
/// With `force` existing traces are ignored and overwritten.
pub fn run_bench(config: &RunConfig, verifier: Arc<dyn Verifier>, force: bool) -> Result<BenchOutcome, CliError> {
    let suite_dir = config.suite.as_deref().ok_or(CliError::NoSuite)?;
    let suite = load_tasks(suite_dir)?;
    let backends = Backends::resolve(config)?;

    let mut outcome = BenchOutcome::default();
    let mut jobs = Vec::new();
    for setting in &config.settings {
        for task in &suite.tasks {
            let path = trace_path(&config.out, &setting.id, &task.id);
            let clean = !force && path.is_file() && read_trace(&path).is_ok_and(|s| s.error.is_none());
            if clean {
                outcome.skipped += 1;
            } else {
                jobs.push((setting, task));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let results: Vec<Result<RepairSession, (String, Box<CliError>)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(setting, task)| {
                let key = format!("{}/{}", setting.id, task.id);
                let session = backends.run(task, setting, verifier.as_ref()).map_err(|e| (key.clone(), Box::new(e)))?;
                write_trace(&config.out, &session).map_err(|e| (key, Box::new(e.into())))?;
                Ok(session)
            })
            .collect()
    });
    for r in results {
        match r {
            Ok(s) => {
                outcome.ran += 1;
                if let Some(err) = &s.error {
                    tracing::warn!(setting = %s.setting_id, task = %s.task_id, error = %err, "session ended early");
                    outcome.infra_failures.push(format!("{}/{}", s.setting_id, s.task_id));
                }
            }
            Err((key, e)) => {
                tracing::error!(session = %key, error = %e, "session could not run");
                outcome.infra_failures.push(key);
            }
        }
    }
    outcome.infra_failures.sort();
    outcome.reports = cmd_report(&config.out)?;
    Ok(outcome)
}

pub fn cmd_bench(config: &RunConfig, force: bool) -> Result<BenchOutcome, CliError> {
    let verifier = runner_verifier(config)?;
    run_bench(config, Arc::new(verifier), force)
}

/// Rebuilds the reports from the traces under `out_dir`.
pub fn cmd_report(out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !out_dir.is_dir() {
        return Err(CliError::NoTraces(out_dir.to_path_buf()));
    }
    let traces = load_traces(out_dir)?;
    if traces.is_empty() {
        return Err(CliError::NoTraces(out_dir.to_path_buf()));
    }
    let results = traces
        .into_iter()
        .map(|(id, sessions)| SuiteResult::from_sessions(&id, sessions))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs = EvalInputs { results, reference: Some(Reference::bundled()) };
    emit_reports(&inputs, out_dir).map_err(io_err(out_dir))
}
