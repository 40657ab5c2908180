//! Plain-file persistence: worlds and policies as JSON documents, trial
//! pools as JSON lines.  Everything read is validated before it is handed
//! onward, and every error names the offending file (and line, for the
//! line-oriented format).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::TrialRecord;
use crate::policy::FscPolicy;
use crate::world::{episode_return, History, Pomdp};

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(path: &Path, err: serde_json::Error) -> Error {
    Error::Parse {
        where_: path.display().to_string(),
        msg: err.to_string(),
    }
}

pub fn load_world(path: impl AsRef<Path>) -> Result<Pomdp> {
    let path = path.as_ref();
    let model: Pomdp = serde_json::from_str(&read_file(path)?).map_err(|e| parse_error(path, e))?;
    model.validate()?;
    Ok(model)
}

pub fn save_world(path: impl AsRef<Path>, model: &Pomdp) -> Result<()> {
    let path = path.as_ref();
    let mut doc = serde_json::to_string_pretty(model).map_err(|e| parse_error(path, e))?;
    doc.push('\n');
    write_file(path, &doc)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<FscPolicy> {
    let path = path.as_ref();
    let policy: FscPolicy =
        serde_json::from_str(&read_file(path)?).map_err(|e| parse_error(path, e))?;
    policy.validate()?;
    Ok(policy)
}

pub fn save_policy(path: impl AsRef<Path>, policy: &FscPolicy) -> Result<()> {
    let path = path.as_ref();
    let mut doc = serde_json::to_string_pretty(policy).map_err(|e| parse_error(path, e))?;
    doc.push('\n');
    write_file(path, &doc)
}

/// One line of a trial log.  The return is redundant with the history but
/// makes the logs greppable.
#[derive(Debug, Serialize, Deserialize)]
struct TrialLine {
    trial: usize,
    policy: FscPolicy,
    history: History,
    #[serde(rename = "return")]
    ret: f64,
}

/// Renders records as the JSON-lines document `save_trials` writes,
/// numbered from 1 in pool order.  Callers that prepend `#` header lines
/// get a file `load_trials` still accepts.
pub fn trials_document(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, record) in records.iter().enumerate() {
        let line = TrialLine {
            trial: i + 1,
            policy: record.policy.clone(),
            history: record.history.clone(),
            ret: episode_return(&record.history),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Parse {
            where_: format!("trial {}", i + 1),
            msg: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes records as JSON lines, numbered from 1 in pool order.
pub fn save_trials(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &trials_document(records)?)
}

/// Reads a trial log, skipping blank and `#`-comment lines.  Parse and
/// validation failures report the 1-based line number.
pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    for (idx, line) in read_file(path)?.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parsed: TrialLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            where_: format!("{}:{}", path.display(), idx + 1),
            msg: e.to_string(),
        })?;
        parsed.policy.validate().map_err(|e| Error::Parse {
            where_: format!("{}:{}", path.display(), idx + 1),
            msg: e.to_string(),
        })?;
        records.push(TrialRecord {
            policy: parsed.policy,
            history: parsed.history,
        });
    }
    Ok(records)
}
