//! Report files written under `<out>/reports/`.
//!
//! | file | columns |
//! |------|---------|
//! | `correct_at_k.csv` | setting, k, fixed, tasks, correct_at_k |
//! | `family_counts.csv` | family, tasks, one column per setting, then one per reference tool |
//! | `bug_types.csv` | setting, bug_type, tasks, fixed |
//! | `failure_histogram.csv` | setting, category, count |
//! | `iteration_stats.csv` | setting, fixed_sessions, min, q1, median, q3, max |
//! | `cost_summary.csv` | setting, partition, sessions, median_time_s, max_time_s, median_cost_usd, max_cost_usd, total_cost_usd |
//! | `overlap.csv` | kind, participants, count, tasks |
//! | `transitions.csv` | setting, iteration, from, to, count |
//! | `summary.json` | per-setting headline numbers and anomalies |
//!
//! Rows are sorted and numbers printed with fixed scales, so identical
//! inputs give identical bytes. With no results only `summary.json` is written.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::Serialize;

use super::{
    bug_type_counts, correct_at_k, cost_summary, failure_histogram, family_counts, iteration_stats, overlap_sets,
    status_transitions, PartitionStats, Reference, SuiteResult,
};
use crate::orchestrator::FailureCategory;

pub const REPORTS_DIR: &str = "reports";
pub const SUMMARY_FILE: &str = "summary.json";

const TABLES: [&str; 8] = [
    "correct_at_k.csv",
    "family_counts.csv",
    "bug_types.csv",
    "failure_histogram.csv",
    "iteration_stats.csv",
    "cost_summary.csv",
    "overlap.csv",
    "transitions.csv",
];

const NOTES: [&str; 2] = [
    "The repair agent keeps its full conversation; the oldest turns are dropped first when it would overflow the context window.",
    "The repair-agent instruction states the configured iteration budget.",
];

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub results: Vec<SuiteResult>,
    /// Published per-family counts to compare against; used only when its
    /// families match the evaluated suite.
    pub reference: Option<Reference>,
}

#[derive(Serialize)]
struct SettingSummary {
    id: String,
    budget: u32,
    tasks: usize,
    fixed: usize,
    correct_at_budget: Option<Decimal>,
    failed_iterations: usize,
    median_fix_iteration: Option<Decimal>,
    total_cost_usd: Decimal,
    anomalous_sessions: Vec<String>,
    errored_sessions: Vec<String>,
}

#[derive(Serialize)]
struct Summary {
    settings: Vec<SettingSummary>,
    notes: Vec<&'static str>,
}

/// Writes every report for `inputs` into `<out_dir>/reports`, returning the paths written.
pub fn emit_reports(inputs: &EvalInputs, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let dir = out_dir.join(REPORTS_DIR);
    fs::create_dir_all(&dir)?;
    for name in TABLES {
        match fs::remove_file(dir.join(name)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
    }

    let results = &inputs.results;
    let mut written = Vec::new();
    if !results.is_empty() {
        let external = external_sets(inputs);
        let tables: [(&str, Vec<Vec<String>>); 8] = [
            (TABLES[0], correct_at_k_rows(results)),
            (TABLES[1], family_rows(results, external.as_ref().map(|(r, _)| *r))),
            (TABLES[2], bug_type_rows(results)),
            (TABLES[3], histogram_rows(results)),
            (TABLES[4], iteration_rows(results)),
            (TABLES[5], cost_rows(results)),
            (TABLES[6], overlap_rows(results, external.map(|(_, s)| s).unwrap_or_default())?),
            (TABLES[7], transition_rows(results)),
        ];
        for (name, rows) in tables {
            let path = dir.join(name);
            write_csv(&path, &rows)?;
            written.push(path);
        }
    }

    let path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&summary(results)).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

fn row<const N: usize>(cells: [&dyn ToString; N]) -> Vec<String> {
    cells.iter().map(|c| c.to_string()).collect()
}

fn header_row(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn scaled(mut d: Decimal, dp: u32) -> Decimal {
    d.rescale(dp);
    d
}

fn universe(results: &[SuiteResult]) -> BTreeSet<String> {
    results.first().map(|r| r.task_index.keys().cloned().collect()).unwrap_or_default()
}

fn external_sets(inputs: &EvalInputs) -> Option<(&Reference, BTreeMap<String, BTreeSet<String>>)> {
    let reference = inputs.reference.as_ref()?;
    let families: BTreeSet<&String> =
        inputs.results.iter().flat_map(|r| r.task_index.values().map(|t| &t.family)).collect();
    if families != reference.families.iter().collect() {
        return None;
    }
    match reference.approximate_fix_sets(&universe(&inputs.results)) {
        Ok(sets) => Some((reference, sets)),
        Err(e) => {
            tracing::warn!(error = %e, "reference data does not fit this suite; skipping comparison columns");
            None
        }
    }
}

fn correct_at_k_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let mut rows = vec![header_row(&["setting", "k", "fixed", "tasks", "correct_at_k"])];
    for r in results {
        for k in 1..=r.budget {
            let Ok(pct) = correct_at_k(r, k) else { continue };
            rows.push(row([&r.setting_id, &k, &r.fixed_within(k), &r.sessions.len(), &pct]));
        }
    }
    rows
}

fn family_rows(results: &[SuiteResult], reference: Option<&Reference>) -> Vec<Vec<String>> {
    let mut header = vec!["family".to_string(), "tasks".to_string()];
    header.extend(results.iter().map(|r| r.setting_id.clone()));
    let tools: Vec<&String> = reference.map(|r| r.external_tools.keys().collect()).unwrap_or_default();
    header.extend(tools.iter().map(|t| t.to_string()));

    let mut tasks_per_family: BTreeMap<String, usize> = BTreeMap::new();
    for info in results.first().map(|r| r.task_index.values()).into_iter().flatten() {
        *tasks_per_family.entry(info.family.clone()).or_default() += 1;
    }
    let counts: Vec<BTreeMap<String, usize>> = results.iter().map(family_counts).collect();

    let width = header.len() - 1;
    let mut totals = vec![0usize; width];
    let mut rows = vec![header];
    for (family, &n) in &tasks_per_family {
        let mut cells = vec![n];
        cells.extend(counts.iter().map(|c| c.get(family).copied().unwrap_or(0)));
        cells.extend(tools.iter().map(|t| reference.and_then(|r| r.family_count(t, family)).unwrap_or(0)));
        for (t, c) in totals.iter_mut().zip(&cells) {
            *t += c;
        }
        let mut line = vec![family.clone()];
        line.extend(cells.iter().map(usize::to_string));
        rows.push(line);
    }
    let mut summary = vec!["Summary".to_string()];
    summary.extend(totals.iter().map(usize::to_string));
    rows.push(summary);
    rows
}

fn bug_type_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let mut rows = vec![header_row(&["setting", "bug_type", "tasks", "fixed"])];
    for r in results {
        for (bug_type, (tasks, fixed)) in bug_type_counts(r) {
            rows.push(row([&r.setting_id, &bug_type.as_str(), &tasks, &fixed]));
        }
    }
    rows
}

fn histogram_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let h = failure_histogram(results);
    let mut rows = vec![header_row(&["setting", "category", "count"])];
    for r in results {
        for c in FailureCategory::ALL {
            rows.push(row([&r.setting_id, &c, &h.get(&r.setting_id, c)]));
        }
    }
    rows
}

fn iteration_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let header = ["setting", "fixed_sessions", "min", "q1", "median", "q3", "max"];
    let mut rows = vec![header_row(&header)];
    for r in results {
        rows.push(match iteration_stats(r) {
            Ok(s) => row([
                &r.setting_id,
                &s.fixed_sessions,
                &s.min,
                &scaled(s.q1, 2),
                &scaled(s.median, 2),
                &scaled(s.q3, 2),
                &s.max,
            ]),
            Err(_) => row([&r.setting_id, &0, &"", &"", &"", &"", &""]),
        });
    }
    rows
}

fn cost_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let header = [
        "setting",
        "partition",
        "sessions",
        "median_time_s",
        "max_time_s",
        "median_cost_usd",
        "max_cost_usd",
        "total_cost_usd",
    ];
    let mut rows = vec![header_row(&header)];
    let secs = |ms: Decimal| scaled(ms / Decimal::ONE_THOUSAND, 3);
    for r in results {
        let c = cost_summary(r);
        for (label, part) in [("fixed", &c.fixed), ("unfixed", &c.unfixed)] {
            let p: Option<&PartitionStats> = part.as_ref();
            rows.push(vec![
                r.setting_id.clone(),
                label.to_string(),
                p.map_or(0, |p| p.sessions).to_string(),
                opt(p.map(|p| secs(p.median_time_ms))),
                opt(p.map(|p| secs(Decimal::from(p.max_time_ms)))),
                opt(p.map(|p| scaled(p.median_cost_usd, 6))),
                opt(p.map(|p| scaled(p.max_cost_usd, 6))),
                opt(p.map(|p| scaled(p.total_cost_usd, 6))),
            ]);
        }
    }
    rows
}

fn overlap_rows(results: &[SuiteResult], external: BTreeMap<String, BTreeSet<String>>) -> io::Result<Vec<Vec<String>>> {
    let o = overlap_sets(results, &external).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut rows = vec![header_row(&["kind", "participants", "count", "tasks"])];
    let mut push = |kind: &str, who: &[&String], set: &BTreeSet<String>| {
        let who: Vec<&str> = who.iter().map(|s| s.as_str()).collect();
        let tasks: Vec<&str> = set.iter().map(String::as_str).collect();
        rows.push(row([&kind, &who.join("+"), &set.len(), &tasks.join(" ")]));
    };
    for p in &o.participants {
        push("fixed", &[p], &o.fixed[p]);
    }
    for p in &o.participants {
        push("exclusive", &[p], &o.exclusive[p]);
    }
    for ((a, b), set) in &o.pairwise {
        push("pairwise", &[a, b], set);
    }
    let everyone: Vec<&String> = o.participants.iter().collect();
    push("all", &everyone, &o.all_shared);
    for (members, set) in &o.regions {
        push("region", &members.iter().collect::<Vec<_>>(), set);
    }
    Ok(rows)
}

fn transition_rows(results: &[SuiteResult]) -> Vec<Vec<String>> {
    let mut rows = vec![header_row(&["setting", "iteration", "from", "to", "count"])];
    for r in results {
        for ((iteration, from, to), n) in status_transitions(r) {
            rows.push(row([&r.setting_id, &iteration, &from, &to, &n]));
        }
    }
    rows
}

fn summary(results: &[SuiteResult]) -> Summary {
    let h = failure_histogram(results);
    let settings = results
        .iter()
        .map(|r| {
            let ids = |pred: &dyn Fn(&crate::orchestrator::RepairSession) -> bool| {
                r.sessions.iter().filter(|s| pred(s)).map(|s| s.task_id.clone()).collect::<Vec<_>>()
            };
            SettingSummary {
                id: r.setting_id.clone(),
                budget: r.budget,
                tasks: r.sessions.len(),
                fixed: r.fixed_tasks().len(),
                correct_at_budget: correct_at_k(r, r.budget).ok(),
                failed_iterations: FailureCategory::ALL.iter().map(|&c| h.get(&r.setting_id, c)).sum(),
                median_fix_iteration: iteration_stats(r).ok().map(|s| scaled(s.median, 2)),
                total_cost_usd: scaled(r.sessions.iter().map(|s| s.total_cost_usd).sum(), 6),
                anomalous_sessions: ids(&|s| s.is_anomalous()),
                errored_sessions: ids(&|s| s.error.is_some()),
            }
        })
        .collect();
    Summary { settings, notes: NOTES.to_vec() }
}
