//! JSONL stage files with an optional header line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const HEADER_KEY: &str = "_header";

fn is_header(line: &str) -> bool {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key(HEADER_KEY)))
        .unwrap_or(false)
}

/// Reads records of type `T`, skipping blank and header lines. Schema
/// mismatches name the file and line.
pub fn read<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<Vec<T>, CliError> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {} input {}", stage, path.display()))
        .map_err(CliError::Usage)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line
            .with_context(|| format!("{}:{}: unreadable line", path.display(), i + 1))
            .map_err(CliError::Usage)?;
        if line.trim().is_empty() || is_header(&line) {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            CliError::Usage(anyhow::anyhow!(
                "{}:{}: not a {} record: {}",
                path.display(),
                i + 1,
                stage,
                e
            ))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Ids already present in an output file, for resuming.
pub fn existing_ids(path: &Path, key: &str) -> Result<HashSet<String>, CliError> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let values: Vec<Value> = read(path, "existing output")?;
    Ok(values
        .iter()
        .filter_map(|v| v.get(key).and_then(Value::as_str).map(str::to_owned))
        .collect())
}

pub struct Writer {
    inner: BufWriter<File>,
}

impl Writer {
    /// Opens `path` for a stage. Resuming appends to an existing file;
    /// otherwise the file is replaced. The header goes only into new files.
    pub fn create(path: &Path, stage: &str, header: bool, resume: bool) -> Result<Self, CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))
                .map_err(CliError::Usage)?;
        }
        let appending = resume && path.exists();
        let file = if appending {
            OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Usage)?;
        let mut w = Writer {
            inner: BufWriter::new(file),
        };
        if header && !appending {
            let created = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            w.write_value(&json!({
                HEADER_KEY: {
                    "tool": "depfix",
                    "version": env!("CARGO_PKG_VERSION"),
                    "stage": stage,
                    "created_unix": created,
                }
            }))?;
        }
        Ok(w)
    }

    fn write_value<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.inner, value)
            .map_err(|e| CliError::Usage(e.into()))?;
        self.inner
            .write_all(b"\n")
            .map_err(|e| CliError::Usage(e.into()))
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        self.write_value(record)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(|e| CliError::Usage(e.into()))
    }
}
