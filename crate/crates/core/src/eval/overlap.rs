use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{EvalError, SuiteResult};

type TaskSet = BTreeSet<String>;

/// Exclusive and shared fixed-task sets across settings and external tools.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Overlap {
    /// Settings in input order, then external tools by name.
    pub participants: Vec<String>,
    pub universe: TaskSet,
    pub fixed: BTreeMap<String, TaskSet>,
    /// Tasks fixed by this participant and nobody else.
    pub exclusive: BTreeMap<String, TaskSet>,
    pub pairwise: BTreeMap<(String, String), TaskSet>,
    /// Tasks fixed by every participant.
    pub all_shared: TaskSet,
    /// Venn regions: each task keyed by exactly the participants that fixed it.
    pub regions: BTreeMap<Vec<String>, TaskSet>,
}

pub fn overlap_sets(results: &[SuiteResult], external_tools: &BTreeMap<String, TaskSet>) -> Result<Overlap, EvalError> {
    let universe: TaskSet = match results.first() {
        Some(r) => r.task_index.keys().cloned().collect(),
        None => external_tools.values().flatten().cloned().collect(),
    };
    let mismatch = |participant: &str, task: &str| EvalError::UniverseMismatch {
        participant: participant.to_string(),
        task: task.to_string(),
    };
    for r in results.iter().skip(1) {
        let other: TaskSet = r.task_index.keys().cloned().collect();
        if let Some(t) = other.symmetric_difference(&universe).next() {
            return Err(mismatch(&r.setting_id, t));
        }
    }

    let mut fixed: Vec<(String, TaskSet)> = results.iter().map(|r| (r.setting_id.clone(), r.fixed_tasks())).collect();
    for (name, set) in external_tools {
        if let Some(t) = set.iter().find(|t| !universe.contains(*t)) {
            return Err(mismatch(name, t));
        }
        fixed.push((name.clone(), set.clone()));
    }

    let participants: Vec<String> = fixed.iter().map(|(n, _)| n.clone()).collect();
    let mut regions: BTreeMap<Vec<String>, TaskSet> = BTreeMap::new();
    for task in &universe {
        let members: Vec<String> = fixed.iter().filter(|(_, s)| s.contains(task)).map(|(n, _)| n.clone()).collect();
        if !members.is_empty() {
            regions.entry(members).or_default().insert(task.clone());
        }
    }

    let exclusive = fixed
        .iter()
        .map(|(name, _)| {
            let only = regions.get(std::slice::from_ref(name)).cloned().unwrap_or_default();
            (name.clone(), only)
        })
        .collect();
    let mut pairwise = BTreeMap::new();
    for (i, (a, sa)) in fixed.iter().enumerate() {
        for (b, sb) in &fixed[i + 1..] {
            pairwise.insert((a.clone(), b.clone()), sa.intersection(sb).cloned().collect());
        }
    }
    let all_shared = match fixed.split_first() {
        Some(((_, first), rest)) => {
            first.iter().filter(|t| rest.iter().all(|(_, s)| s.contains(*t))).cloned().collect()
        }
        None => TaskSet::new(),
    };

    Ok(Overlap { participants, universe, fixed: fixed.into_iter().collect(), exclusive, pairwise, all_shared, regions })
}
