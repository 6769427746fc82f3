//! Benchmark corpus loading.
//!
//! A suite lives at `<root>/<suite>/*.als`, with optional ground truths under
//! `<root>/<suite>/expected/` using identical file names. Repair-oracle
//! annotations (`// Fix: ...` comment lines) are removed before a task is ever
//! shown to a model, and their count decides the bug type.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALLOY_EXTENSION: &str = "als";
pub const GROUND_TRUTH_DIR: &str = "expected";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("suite directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("suite directory {0} contains no .als files")]
    EmptySuite(PathBuf),
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("{path} is not valid UTF-8")]
    InvalidEncoding { path: PathBuf },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BugType {
    SingleLine,
    MultiLine,
    Unannotated,
}

impl BugType {
    pub fn as_str(self) -> &'static str {
        match self {
            BugType::SingleLine => "SingleLine",
            BugType::MultiLine => "MultiLine",
            BugType::Unannotated => "Unannotated",
        }
    }
}

impl fmt::Display for BugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTask {
    /// Suite-relative file stem, e.g. `farmer1`.
    pub id: String,
    pub family: String,
    pub source_text: String,
    pub clean_text: String,
    pub bug_type: BugType,
    pub ground_truth: Option<String>,
}

impl RepairTask {
    /// Builds a task from raw source, stripping and classifying it.
    pub fn from_source(id: impl Into<String>, source_text: String, ground_truth: Option<String>) -> Self {
        let id = id.into();
        let stripped = strip_fix_annotations(&source_text);
        if stripped.block_comment_hits > 0 {
            tracing::warn!(
                task = %id,
                lines = stripped.block_comment_hits,
                "`Fix:` found inside a block comment; left in place"
            );
        }
        RepairTask {
            family: family_of(&id),
            bug_type: classify_bug_type(stripped.fix_count),
            clean_text: stripped.text,
            source_text,
            ground_truth,
            id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub name: String,
    pub tasks: Vec<RepairTask>,
}

impl BenchmarkSuite {
    pub fn get(&self, id: &str) -> Option<&RepairTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn count(&self, bug_type: BugType) -> usize {
        self.tasks.iter().filter(|t| t.bug_type == bug_type).count()
    }
}

/// Result of removing `Fix:` annotation lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub text: String,
    pub fix_count: usize,
    /// Lines inside `/* ... */` comments that mention `Fix:`. These are kept.
    pub block_comment_hits: usize,
}

/// True when `line` is a line comment whose body starts with `Fix:`.
pub fn is_fix_annotation(line: &str) -> bool {
    let trimmed = line.trim_start();
    let body = match trimmed.strip_prefix("//").or_else(|| trimmed.strip_prefix("--")) {
        Some(body) => body,
        None => return false,
    };
    body.trim_start().starts_with("Fix:")
}

/// Removes every `// Fix:` / `-- Fix:` line; all other lines are kept byte for byte.
pub fn strip_fix_annotations(source_text: &str) -> Stripped {
    let mut text = String::with_capacity(source_text.len());
    let mut fix_count = 0;
    let mut block_comment_hits = 0;
    let mut in_block = false;

    for line in source_text.split_inclusive('\n') {
        if !in_block && is_fix_annotation(line) {
            fix_count += 1;
            continue;
        }
        if in_block && line.contains("Fix:") {
            block_comment_hits += 1;
        }
        in_block = update_block_state(line, in_block, &mut block_comment_hits);
        text.push_str(line);
    }

    Stripped { text, fix_count, block_comment_hits }
}

// Tracks whether a `/* */` comment is still open at the end of `line`.
fn update_block_state(line: &str, mut in_block: bool, hits: &mut usize) -> bool {
    let mut rest = line;
    loop {
        if in_block {
            match rest.find("*/") {
                Some(end) => {
                    in_block = false;
                    rest = &rest[end + 2..];
                }
                None => return true,
            }
        } else {
            let line_comment = [rest.find("//"), rest.find("--")].into_iter().flatten().min();
            match rest.find("/*") {
                Some(start) if line_comment.is_none_or(|lc| start < lc) => {
                    in_block = true;
                    let after = &rest[start + 2..];
                    let inside = after.find("*/").map_or(after, |end| &after[..end]);
                    if inside.contains("Fix:") {
                        *hits += 1;
                    }
                    rest = after;
                }
                _ => return false,
            }
        }
    }
}

pub fn classify_bug_type(fix_count: usize) -> BugType {
    match fix_count {
        0 => BugType::Unannotated,
        1 => BugType::SingleLine,
        _ => BugType::MultiLine,
    }
}

/// `farmer1` → `farmer`, `student12` → `student`.
pub fn family_of(id: &str) -> String {
    let stem = Path::new(id).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| id.to_string());
    let trimmed = stem.trim_end_matches(|c: char| c.is_ascii_digit());
    if trimmed.is_empty() {
        stem
    } else {
        trimmed.to_string()
    }
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    String::from_utf8(bytes).map_err(|_| CorpusError::InvalidEncoding { path: path.to_path_buf() })
}

fn is_alloy_file(path: &Path) -> bool {
    path.is_file() && path.extension().is_some_and(|e| e == ALLOY_EXTENSION)
}

/// Loads `<root_dir>/<suite_name>`; tasks come back sorted by id.
pub fn load_suite(root_dir: &Path, suite_name: &str) -> Result<BenchmarkSuite, CorpusError> {
    let dir = root_dir.join(suite_name);
    load_suite_dir(&dir, suite_name)
}

pub fn load_suite_dir(dir: &Path, suite_name: &str) -> Result<BenchmarkSuite, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::MissingDirectory(dir.to_path_buf()));
    }
    let io_err = |source| CorpusError::Io { path: dir.to_path_buf(), source };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err)?;
    files.retain(|p| is_alloy_file(p));
    if files.is_empty() {
        return Err(CorpusError::EmptySuite(dir.to_path_buf()));
    }

    let expected_dir = dir.join(GROUND_TRUTH_DIR);
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(files.len());
    for path in files {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateTaskId(id));
        }
        let source = read_utf8(&path)?;
        let truth_path = expected_dir.join(path.file_name().unwrap_or_default());
        let ground_truth = if truth_path.is_file() { Some(read_utf8(&truth_path)?) } else { None };
        tasks.push(RepairTask::from_source(id, source, ground_truth));
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(BenchmarkSuite { name: suite_name.to_string(), tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FARMER_SNIPPET: &str = "pred crossRiver [from, from', to, to': set Object] {\n  // Fix: replace \"a\" with \"b\".\n  (from' = from - Farmer && to' = to - to.eats + Farmer)\n  // Fix: replace \"c\" with \"d\".\n  || (some item: from - Farmer {\n    from' = from - Farmer - item\n    to' = to - to.eats + Farmer + item })\n}\n";

    #[test]
    fn strips_both_farmer_annotations() {
        let s = strip_fix_annotations(FARMER_SNIPPET);
        assert_eq!(s.fix_count, 2);
        assert!(!s.text.contains("Fix:"));
        assert_eq!(s.text.lines().count(), FARMER_SNIPPET.lines().count() - 2);
        assert_eq!(classify_bug_type(s.fix_count), BugType::MultiLine);
    }

    #[test]
    fn no_annotations_is_identity() {
        let src = "sig A {}\nfact { some A }\n";
        let s = strip_fix_annotations(src);
        assert_eq!(s.text, src);
        assert_eq!(s.fix_count, 0);
    }

    #[test]
    fn mid_line_fix_is_not_an_annotation() {
        let src = "pred p { some Fix: A }\nsig A {} // Fix: trailing comment\n";
        let s = strip_fix_annotations(src);
        assert_eq!(s.text, src);
        assert_eq!(s.fix_count, 0);
    }

    #[test]
    fn dash_comments_and_spacing() {
        let src = "sig A {}\n  --Fix: one\n\t//   Fix: two\n// Fixed: not an annotation\n";
        let s = strip_fix_annotations(src);
        assert_eq!(s.fix_count, 2);
        assert_eq!(s.text, "sig A {}\n// Fixed: not an annotation\n");
    }

    #[test]
    fn crlf_and_missing_trailing_newline_preserved() {
        let src = "sig A {}\r\n// Fix: x\r\nfact {}";
        let s = strip_fix_annotations(src);
        assert_eq!(s.text, "sig A {}\r\nfact {}");
    }

    #[test]
    fn block_comment_fix_is_kept_and_counted() {
        let src = "/* Fix: inside a block\n// Fix: still inside\n*/\nsig A {}\n// Fix: real\n";
        let s = strip_fix_annotations(src);
        assert_eq!(s.fix_count, 1);
        assert_eq!(s.block_comment_hits, 2);
        assert!(s.text.contains("// Fix: still inside"));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_bug_type(0), BugType::Unannotated);
        assert_eq!(classify_bug_type(1), BugType::SingleLine);
        assert_eq!(classify_bug_type(2), BugType::MultiLine);
        assert_eq!(classify_bug_type(7), BugType::MultiLine);
    }

    #[test]
    fn families() {
        assert_eq!(family_of("farmer1"), "farmer");
        assert_eq!(family_of("student19.als"), "student");
        assert_eq!(family_of("balancedBST3"), "balancedBST");
        assert_eq!(family_of("trash01"), "trash");
        assert_eq!(family_of("42"), "42");
    }

    #[test]
    fn missing_and_empty_directories() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_suite(tmp.path(), "nope"), Err(CorpusError::MissingDirectory(_))));
        fs::create_dir(tmp.path().join("empty")).unwrap();
        fs::write(tmp.path().join("empty/readme.txt"), "x").unwrap();
        assert!(matches!(load_suite(tmp.path(), "empty"), Err(CorpusError::EmptySuite(_))));
    }

    #[test]
    fn invalid_utf8_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        fs::create_dir(&dir).unwrap();
        fs::write(dir.join("bad1.als"), [0x73, 0x69, 0x67, 0xff, 0xfe]).unwrap();
        assert!(matches!(load_suite(tmp.path(), "s"), Err(CorpusError::InvalidEncoding { .. })));
    }

    #[test]
    fn pairs_ground_truth_and_sorts() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        fs::create_dir_all(dir.join(GROUND_TRUTH_DIR)).unwrap();
        fs::write(dir.join("b2.als"), "// Fix: x\nsig B {}\n").unwrap();
        fs::write(dir.join("a1.als"), "sig A {}\n").unwrap();
        fs::write(dir.join(GROUND_TRUTH_DIR).join("b2.als"), "sig B2 {}\n").unwrap();
        let suite = load_suite(tmp.path(), "s").unwrap();
        let ids: Vec<_> = suite.tasks.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["a1", "b2"]);
        assert_eq!(suite.tasks[0].ground_truth, None);
        assert_eq!(suite.tasks[0].bug_type, BugType::Unannotated);
        assert_eq!(suite.tasks[1].ground_truth.as_deref(), Some("sig B2 {}\n"));
        assert_eq!(suite.tasks[1].clean_text, "sig B {}\n");
        assert_eq!(suite.tasks[1].family, "b");
    }

    fn line_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z {}|.]{0,20}",
            Just("// Fix: replace x with y".to_string()),
            Just("  -- Fix: z".to_string()),
            Just("/* Fix: block */".to_string()),
            Just("sig A { f: Fix: }".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn strip_is_idempotent_and_shrinking(lines in proptest::collection::vec(line_strategy(), 0..30)) {
            let src = lines.join("\n");
            let once = strip_fix_annotations(&src);
            let twice = strip_fix_annotations(&once.text);
            prop_assert_eq!(&twice.text, &once.text);
            prop_assert_eq!(twice.fix_count, 0);
            prop_assert!(once.text.lines().count() <= src.lines().count());
            prop_assert_eq!(src.split_inclusive('\n').count() - once.text.split_inclusive('\n').count(), once.fix_count);
        }
    }
}
