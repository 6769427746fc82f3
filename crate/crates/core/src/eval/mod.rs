//! Aggregation of session traces into repair metrics and report tables.

mod emit;
mod overlap;
mod reference;

use std::collections::{BTreeMap, BTreeSet};

use rust_decimal::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BugType;
use crate::orchestrator::{FailureCategory, IterationStatus, RepairSession};

pub use emit::{emit_reports, EvalInputs, REPORTS_DIR, SUMMARY_FILE};
pub use overlap::{overlap_sets, Overlap};
pub use reference::{Reference, ReferenceError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("suite `{0}` has no sessions")]
    EmptySuite(String),
    #[error("k = {k} outside 1..={max}")]
    InvalidK { k: u32, max: u32 },
    #[error("suite `{0}` has no fixed sessions")]
    NoFixedSessions(String),
    #[error("task `{task}` appears more than once in suite `{setting}`")]
    DuplicateTask { setting: String, task: String },
    #[error("`{participant}` refers to task `{task}` outside the shared task universe")]
    UniverseMismatch { participant: String, task: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub family: String,
    pub bug_type: BugType,
}

/// All sessions of one setting, one per task.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub setting_id: String,
    pub budget: u32,
    pub sessions: Vec<RepairSession>,
    pub task_index: BTreeMap<String, TaskInfo>,
}

impl SuiteResult {
    /// Builds the task index from the sessions themselves; sessions are
    /// sorted by task id.
    pub fn from_sessions(setting_id: &str, mut sessions: Vec<RepairSession>) -> Result<Self, EvalError> {
        sessions.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let mut task_index = BTreeMap::new();
        for s in &sessions {
            let info = TaskInfo { family: s.family.clone(), bug_type: s.bug_type };
            if task_index.insert(s.task_id.clone(), info).is_some() {
                return Err(EvalError::DuplicateTask { setting: setting_id.to_string(), task: s.task_id.clone() });
            }
        }
        let budget = sessions.iter().map(|s| s.budget).max().unwrap_or(0);
        Ok(Self { setting_id: setting_id.to_string(), budget, sessions, task_index })
    }

    pub fn fixed_within(&self, k: u32) -> usize {
        self.sessions.iter().filter(|s| s.final_status.fixed_at().is_some_and(|j| j <= k)).count()
    }

    pub fn fixed_tasks(&self) -> BTreeSet<String> {
        self.sessions.iter().filter(|s| s.is_fixed()).map(|s| s.task_id.clone()).collect()
    }
}

/// Percentage with one decimal, rounding halves away from zero.
pub fn percentage(numerator: usize, denominator: usize) -> Decimal {
    let mut p = (Decimal::from(numerator) * Decimal::ONE_HUNDRED / Decimal::from(denominator))
        .round_dp_with_strategy(1, RoundingStrategy::MidpointAwayFromZero);
    p.rescale(1);
    p
}

/// Share of tasks fixed within the first `k` iterations.
pub fn correct_at_k(result: &SuiteResult, k: u32) -> Result<Decimal, EvalError> {
    if result.sessions.is_empty() {
        return Err(EvalError::EmptySuite(result.setting_id.clone()));
    }
    if k == 0 || k > result.budget {
        return Err(EvalError::InvalidK { k, max: result.budget });
    }
    Ok(percentage(result.fixed_within(k), result.sessions.len()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FailureHistogram {
    pub counts: BTreeMap<(String, FailureCategory), usize>,
    /// (setting, task) pairs left out because the analyzer timed out.
    pub anomalous: Vec<(String, String)>,
}

impl FailureHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, setting: &str, category: FailureCategory) -> usize {
        self.counts.get(&(setting.to_string(), category)).copied().unwrap_or(0)
    }
}

pub fn failure_histogram(results: &[SuiteResult]) -> FailureHistogram {
    let mut h = FailureHistogram::default();
    for r in results {
        for s in &r.sessions {
            if s.is_anomalous() {
                h.anomalous.push((r.setting_id.clone(), s.task_id.clone()));
                continue;
            }
            for it in &s.iterations {
                if let IterationStatus::Failed(c) = it.status {
                    *h.counts.entry((r.setting_id.clone(), c)).or_default() += 1;
                }
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IterationStats {
    pub fixed_sessions: usize,
    pub min: u32,
    pub q1: Decimal,
    pub median: Decimal,
    pub q3: Decimal,
    pub max: u32,
}

/// Linear-interpolation quantile over sorted data; `p` in [0, 1].
pub fn quantile(sorted: &[Decimal], p: Decimal) -> Option<Decimal> {
    let last = sorted.len().checked_sub(1)?;
    let h = Decimal::from(last) * p;
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(last);
    let j = (i + 1).min(last);
    Some((sorted[i] + (sorted[j] - sorted[i]) * (h - lo)).normalize())
}

pub fn median(values: &[Decimal]) -> Option<Decimal> {
    let mut v = values.to_vec();
    v.sort();
    quantile(&v, Decimal::new(5, 1))
}

/// Order statistics of the iteration at which fixed sessions succeeded.
pub fn iteration_stats(result: &SuiteResult) -> Result<IterationStats, EvalError> {
    let mut ks: Vec<u32> = result.sessions.iter().filter_map(|s| s.final_status.fixed_at()).collect();
    if ks.is_empty() {
        return Err(EvalError::NoFixedSessions(result.setting_id.clone()));
    }
    ks.sort_unstable();
    let d: Vec<Decimal> = ks.iter().map(|&k| Decimal::from(k)).collect();
    let q = |p| quantile(&d, p).expect("non-empty");
    Ok(IterationStats {
        fixed_sessions: ks.len(),
        min: ks[0],
        q1: q(Decimal::new(25, 2)),
        median: q(Decimal::new(5, 1)),
        q3: q(Decimal::new(75, 2)),
        max: ks[ks.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionCost {
    pub task_id: String,
    pub fixed: bool,
    pub cost_usd: Decimal,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionStats {
    pub sessions: usize,
    pub median_time_ms: Decimal,
    pub max_time_ms: u64,
    pub median_cost_usd: Decimal,
    pub max_cost_usd: Decimal,
    pub total_cost_usd: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostSummary {
    pub sessions: Vec<SessionCost>,
    /// `None` when the partition is empty.
    pub fixed: Option<PartitionStats>,
    pub unfixed: Option<PartitionStats>,
}

fn partition_stats(rows: &[&SessionCost]) -> Option<PartitionStats> {
    if rows.is_empty() {
        return None;
    }
    let times: Vec<Decimal> = rows.iter().map(|r| Decimal::from(r.wall_time_ms)).collect();
    let costs: Vec<Decimal> = rows.iter().map(|r| r.cost_usd).collect();
    Some(PartitionStats {
        sessions: rows.len(),
        median_time_ms: median(&times)?,
        max_time_ms: rows.iter().map(|r| r.wall_time_ms).max()?,
        median_cost_usd: median(&costs)?,
        max_cost_usd: costs.iter().copied().max()?.normalize(),
        total_cost_usd: costs.iter().copied().sum::<Decimal>().normalize(),
    })
}

pub fn cost_summary(result: &SuiteResult) -> CostSummary {
    let sessions: Vec<SessionCost> = result
        .sessions
        .iter()
        .map(|s| SessionCost {
            task_id: s.task_id.clone(),
            fixed: s.is_fixed(),
            cost_usd: s.total_cost_usd,
            wall_time_ms: s.total_time_ms,
        })
        .collect();
    let (fixed, unfixed): (Vec<&SessionCost>, Vec<&SessionCost>) = sessions.iter().partition(|s| s.fixed);
    CostSummary { fixed: partition_stats(&fixed), unfixed: partition_stats(&unfixed), sessions }
}

/// Fixed-task counts per family, in family order.
pub fn family_counts(result: &SuiteResult) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = result.task_index.values().map(|t| (t.family.clone(), 0)).collect();
    for s in result.sessions.iter().filter(|s| s.is_fixed()) {
        if let Some(info) = result.task_index.get(&s.task_id) {
            *counts.entry(info.family.clone()).or_default() += 1;
        }
    }
    counts
}

/// (tasks, fixed) per bug type.
pub fn bug_type_counts(result: &SuiteResult) -> BTreeMap<BugType, (usize, usize)> {
    let mut out: BTreeMap<BugType, (usize, usize)> = BTreeMap::new();
    for s in &result.sessions {
        let bug_type = result.task_index.get(&s.task_id).map_or(s.bug_type, |t| t.bug_type);
        let e = out.entry(bug_type).or_default();
        e.0 += 1;
        e.1 += usize::from(s.is_fixed());
    }
    out
}

/// Status label used for the pseudo-state before the first iteration.
pub const START_STATE: &str = "Start";

/// Counts of status changes between consecutive iterations, keyed by
/// (iteration reached, previous status, new status).
pub fn status_transitions(result: &SuiteResult) -> BTreeMap<(u32, String, String), usize> {
    let mut out = BTreeMap::new();
    for s in &result.sessions {
        let mut prev = START_STATE.to_string();
        for it in &s.iterations {
            let next = it.status.to_string();
            *out.entry((it.index, prev, next.clone())).or_default() += 1;
            prev = next;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Usage;
    use crate::orchestrator::{FeedbackLevel, FinalStatus, IterationRecord};

    pub(crate) fn session(task: &str, statuses: &[IterationStatus]) -> RepairSession {
        let iterations: Vec<IterationRecord> = statuses
            .iter()
            .enumerate()
            .map(|(i, &status)| IterationRecord {
                index: i as u32 + 1,
                feedback_sent: None,
                raw_response: String::new(),
                parse_via: None,
                proposed_spec: None,
                analyzer_report: None,
                status,
                usage: Usage::default(),
                wall_time_ms: 0,
                prompt_agent: None,
            })
            .collect();
        let final_status = match statuses.last() {
            Some(IterationStatus::Fixed) => FinalStatus::Fixed { at_iteration: statuses.len() as u32 },
            _ => FinalStatus::Unfixed,
        };
        RepairSession {
            task_id: task.into(),
            family: crate::corpus::family_of(task),
            bug_type: BugType::SingleLine,
            setting_id: "S".into(),
            feedback_level: FeedbackLevel::NoFeedback,
            budget: 6,
            repair_model: "m".into(),
            prompt_model: None,
            system_prompt: String::new(),
            initial_prompt: String::new(),
            iterations,
            final_status,
            total_usage: Usage::default(),
            total_cost_usd: Decimal::ZERO,
            total_time_ms: 0,
            aborted_turn: None,
            anomalies: vec![],
            error: None,
        }
    }

    fn fixed_at(task: &str, k: usize) -> RepairSession {
        let mut st = vec![IterationStatus::Failed(FailureCategory::Counterexample); k - 1];
        st.push(IterationStatus::Fixed);
        session(task, &st)
    }

    fn unfixed(task: &str) -> RepairSession {
        session(task, &[IterationStatus::Failed(FailureCategory::Counterexample); 6])
    }

    fn suite(fixed_ks: &[usize], total: usize) -> SuiteResult {
        let mut v: Vec<RepairSession> =
            fixed_ks.iter().enumerate().map(|(i, &k)| fixed_at(&format!("t{i:02}"), k)).collect();
        v.extend((fixed_ks.len()..total).map(|i| unfixed(&format!("t{i:02}"))));
        SuiteResult::from_sessions("S", v).unwrap()
    }

    #[test]
    fn correct_at_k_examples() {
        assert_eq!(correct_at_k(&suite(&[1; 15], 38), 6).unwrap(), Decimal::new(395, 1));
        assert_eq!(correct_at_k(&suite(&[1; 22], 38), 6).unwrap(), Decimal::new(579, 1));
        assert_eq!(correct_at_k(&suite(&[], 5), 6).unwrap(), Decimal::ZERO);
        assert_eq!(correct_at_k(&suite(&[], 5), 6).unwrap().to_string(), "0.0");
    }

    #[test]
    fn correct_at_k_rounds_half_up() {
        // 1/8 = 12.5%, 1/16 = 6.25% -> 6.3, 1/80 = 1.25% -> 1.3
        assert_eq!(percentage(1, 8).to_string(), "12.5");
        assert_eq!(percentage(1, 16).to_string(), "6.3");
        assert_eq!(percentage(1, 80).to_string(), "1.3");
        assert_eq!(percentage(3, 3).to_string(), "100.0");
    }

    #[test]
    fn correct_at_k_errors() {
        assert!(matches!(correct_at_k(&suite(&[], 0), 1), Err(EvalError::EmptySuite(_))));
        assert!(matches!(correct_at_k(&suite(&[1], 2), 0), Err(EvalError::InvalidK { .. })));
        assert!(matches!(correct_at_k(&suite(&[1], 2), 7), Err(EvalError::InvalidK { .. })));
    }

    #[test]
    fn correct_at_k_sweep_is_monotone() {
        let s = suite(&[1, 2, 2, 4, 6], 9);
        let ks: Vec<Decimal> = (1..=6).map(|k| correct_at_k(&s, k).unwrap()).collect();
        assert!(ks.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ks[0].to_string(), "11.1");
        assert_eq!(ks[5].to_string(), "55.6");
    }

    #[test]
    fn histogram_examples() {
        let a = session(
            "a1",
            &[
                IterationStatus::Failed(FailureCategory::WrongFormat),
                IterationStatus::Failed(FailureCategory::Counterexample),
                IterationStatus::Fixed,
            ],
        );
        let h = failure_histogram(&[SuiteResult::from_sessions("S", vec![a]).unwrap()]);
        assert_eq!(h.get("S", FailureCategory::WrongFormat), 1);
        assert_eq!(h.get("S", FailureCategory::Counterexample), 1);
        assert_eq!(h.total(), 2);

        let rep = session("b1", &[IterationStatus::Failed(FailureCategory::Repetition); 6]);
        let h = failure_histogram(&[SuiteResult::from_sessions("S", vec![rep]).unwrap()]);
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.get("S", FailureCategory::Repetition), 6);

        assert_eq!(failure_histogram(&[suite(&[1, 1], 2)]).total(), 0);
    }

    #[test]
    fn histogram_skips_timeouts() {
        let mut s = unfixed("c1");
        s.anomalies.push(crate::orchestrator::Anomaly {
            iteration: 6,
            kind: crate::orchestrator::AnomalyKind::VerifierTimeout,
            detail: String::new(),
        });
        let h = failure_histogram(&[SuiteResult::from_sessions("S", vec![s]).unwrap()]);
        assert_eq!(h.total(), 0);
        assert_eq!(h.anomalous, [("S".to_string(), "c1".to_string())]);
    }

    #[test]
    fn iteration_stats_examples() {
        let m = |ks: &[usize]| iteration_stats(&suite(ks, ks.len())).unwrap().median;
        assert_eq!(m(&[1, 1, 1, 5]), Decimal::ONE);
        assert_eq!(m(&[1, 4]), Decimal::new(25, 1));
        assert_eq!(m(&[3]), Decimal::from(3));
        let st = iteration_stats(&suite(&[1, 2, 3, 4, 5], 5)).unwrap();
        assert_eq!((st.min, st.q1, st.q3, st.max), (1, Decimal::from(2), Decimal::from(4), 5));
        assert!(matches!(iteration_stats(&suite(&[], 3)), Err(EvalError::NoFixedSessions(_))));
    }

    #[test]
    fn cost_partitions() {
        let mut a = fixed_at("a1", 1);
        a.total_time_ms = 30_000;
        let mut b = fixed_at("b1", 1);
        b.total_time_ms = 50_000;
        let c = cost_summary(&SuiteResult::from_sessions("S", vec![a.clone(), b]).unwrap());
        assert_eq!(c.fixed.unwrap().median_time_ms, Decimal::from(40_000));
        assert!(c.unfixed.is_none());

        let c = cost_summary(&SuiteResult::from_sessions("S", vec![a]).unwrap());
        assert_eq!(c.fixed.unwrap().median_time_ms, Decimal::from(30_000));

        let c = cost_summary(&suite(&[], 3));
        assert!(c.fixed.is_none());
        assert_eq!(c.unfixed.unwrap().sessions, 3);
    }

    #[test]
    fn duplicate_tasks_rejected() {
        let r = SuiteResult::from_sessions("S", vec![unfixed("a1"), unfixed("a1")]);
        assert!(matches!(r, Err(EvalError::DuplicateTask { .. })));
    }

    #[test]
    fn transitions_start_from_start() {
        let s = SuiteResult::from_sessions("S", vec![fixed_at("a1", 2), fixed_at("b1", 1)]).unwrap();
        let t = status_transitions(&s);
        assert_eq!(t[&(1, "Start".into(), "Counterexample".into())], 1);
        assert_eq!(t[&(1, "Start".into(), "Fixed".into())], 1);
        assert_eq!(t[&(2, "Counterexample".into(), "Fixed".into())], 1);
    }

    #[test]
    fn family_and_bug_type_counts() {
        let s =
            SuiteResult::from_sessions("S", vec![fixed_at("dll1", 1), unfixed("dll2"), fixed_at("arr1", 3)]).unwrap();
        let f = family_counts(&s);
        assert_eq!(f["dll"], 1);
        assert_eq!(f["arr"], 1);
        assert_eq!(bug_type_counts(&s)[&BugType::SingleLine], (3, 2));
    }
}
