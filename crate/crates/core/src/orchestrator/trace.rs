use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::RepairSession;

pub const TRACE_EXTENSION: &str = "trace";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed trace: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// `<out>/<setting>/<task>.trace`
pub fn trace_path(out_dir: &Path, setting_id: &str, task_id: &str) -> PathBuf {
    out_dir.join(setting_id).join(format!("{task_id}.{TRACE_EXTENSION}"))
}

/// Writes the session as pretty JSON, atomically replacing any previous trace.
pub fn write_trace(out_dir: &Path, session: &RepairSession) -> Result<PathBuf, TraceError> {
    let path = trace_path(out_dir, &session.setting_id, &session.task_id);
    let io = |source| TraceError::Io { path: path.clone(), source };
    let dir = path.parent().expect("trace path has a parent");
    fs::create_dir_all(dir).map_err(io)?;
    let mut text = serde_json::to_string_pretty(session).expect("sessions always serialize");
    text.push('\n');
    let tmp = dir.join(format!(".{}.{TRACE_EXTENSION}.tmp", session.task_id));
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, &path).map_err(io)?;
    Ok(path)
}

pub fn read_trace(path: &Path) -> Result<RepairSession, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| TraceError::Json { path: path.to_path_buf(), source })
}

/// Every trace under `out_dir`, grouped by setting directory and sorted by task id.
pub fn load_traces(out_dir: &Path) -> Result<BTreeMap<String, Vec<RepairSession>>, TraceError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TraceError::Io { path, source }
    };
    let mut by_setting = BTreeMap::new();
    for entry in fs::read_dir(out_dir).map_err(io(out_dir))? {
        let dir = entry.map_err(io(out_dir))?.path();
        if !dir.is_dir() {
            continue;
        }
        let mut sessions = Vec::new();
        for file in fs::read_dir(&dir).map_err(io(&dir))? {
            let path = file.map_err(io(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(TRACE_EXTENSION) {
                sessions.push(read_trace(&path)?);
            }
        }
        if !sessions.is_empty() {
            sessions.sort_by(|a: &RepairSession, b| a.task_id.cmp(&b.task_id));
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            by_setting.insert(name, sessions);
        }
    }
    Ok(by_setting)
}
