use std::path::PathBuf;

use alloy_repair::corpus::{load_suite, strip_fix_annotations, BugType};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn arepair_split() {
    let suite = load_suite(&root(), "arepair").unwrap();
    assert_eq!(suite.tasks.len(), 38);
    assert_eq!(suite.count(BugType::SingleLine), 28);
    assert_eq!(suite.count(BugType::MultiLine), 10);
    assert_eq!(suite.count(BugType::Unannotated), 0);
}

#[test]
fn arepair_families() {
    let suite = load_suite(&root(), "arepair").unwrap();
    let mut families = std::collections::BTreeMap::<&str, usize>::new();
    for t in &suite.tasks {
        *families.entry(t.family.as_str()).or_default() += 1;
    }
    let expected = [
        ("addr", 1),
        ("arr", 2),
        ("balancedBST", 3),
        ("bempl", 1),
        ("cd", 2),
        ("ctree", 1),
        ("dll", 4),
        ("farmer", 1),
        ("fsm", 2),
        ("grade", 1),
        ("other", 1),
        ("student", 19),
    ];
    assert_eq!(families.into_iter().collect::<Vec<_>>(), expected);
}

#[test]
fn every_task_has_a_ground_truth_and_loses_its_annotations() {
    for name in ["arepair", "alloy4fun"] {
        for t in load_suite(&root(), name).unwrap().tasks {
            assert!(t.ground_truth.is_some(), "{}", t.id);
            assert_eq!(strip_fix_annotations(&t.clean_text).fix_count, 0, "{}", t.id);
            assert!(!t.clean_text.contains("Fix:"), "{}", t.id);
            assert_ne!(t.ground_truth.as_deref(), Some(t.clean_text.as_str()), "{}", t.id);
        }
    }
}

#[test]
fn alloy4fun_sample_is_single_line() {
    let suite = load_suite(&root(), "alloy4fun").unwrap();
    assert!(!suite.tasks.is_empty());
    assert_eq!(suite.count(BugType::SingleLine), suite.tasks.len());
}

#[test]
fn farmer_keeps_its_commands() {
    let suite = load_suite(&root(), "arepair").unwrap();
    let farmer = suite.get("farmer1").unwrap();
    assert_eq!(farmer.bug_type, BugType::MultiLine);
    assert!(farmer.clean_text.contains("check NoQuantumObjects"));
    assert!(farmer.clean_text.contains("run solvePuzzle"));
}
