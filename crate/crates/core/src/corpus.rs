//! Locating outdated and up-to-dated functions in a source tree.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::mapping::{ApiMapping, Fqn, MappingSet};
use crate::resolve::{analyze_source, ResolvedCall, SourceFunction};
use crate::syntax::{ParseOptions, SyntaxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionKind {
    /// First mapped call is a deprecated API.
    Outdated,
    /// First mapped call is a replacement API.
    UpToDated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedFunction {
    pub function: SourceFunction,
    pub reference_call: ResolvedCall,
    pub mapping: ApiMapping,
    pub kind: FunctionKind,
}

/// Stable sample id: truncated SHA-256 of file, function and reference line.
pub fn sample_id(file: &str, function: &str, reference_line: usize) -> String {
    let mut h = Sha256::new();
    h.update(file.as_bytes());
    h.update([0]);
    h.update(function.as_bytes());
    h.update([0]);
    h.update(reference_line.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_owned()
}

/// The first call (in body order) whose FQN appears in any mapping decides
/// the function's kind. Among mappings mentioning that FQN, file order wins.
pub fn match_function(function: SourceFunction, mappings: &MappingSet) -> Option<MatchedFunction> {
    let (call, mapping) = function.calls.iter().find_map(|c| {
        let fqn = c.fqn.as_ref()?;
        mappings.find_any(fqn).map(|(_, m)| (c.clone(), m.clone()))
    })?;
    let kind = if call.fqn.as_ref() == Some(&mapping.deprecated) {
        FunctionKind::Outdated
    } else {
        FunctionKind::UpToDated
    };
    Some(MatchedFunction {
        function,
        reference_call: call,
        mapping,
        kind,
    })
}

/// Matches every function of one source text.
pub fn match_source(
    file: &str,
    source: &str,
    mappings: &MappingSet,
    opts: &ParseOptions,
) -> Result<Vec<MatchedFunction>, SyntaxError> {
    let analysis = analyze_source(source, opts)?;
    Ok(analysis
        .functions(file, source)
        .into_iter()
        .filter_map(|f| match_function(f, mappings))
        .collect())
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub parse: ParseOptions,
    /// File extensions without the dot.
    pub extensions: Vec<String>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            parse: ParseOptions::default(),
            extensions: vec!["py".to_owned()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanWarning {
    pub file: String,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct CorpusScan {
    pub files_scanned: usize,
    /// Ordered by (file, function start line).
    pub matches: Vec<MatchedFunction>,
    pub warnings: Vec<ScanWarning>,
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("corpus root {0} is not a readable directory")]
    BadRoot(String),
}

/// Matches and resolver notes from one file.
type FileScan = (Vec<MatchedFunction>, Vec<ScanWarning>);

fn relative_label(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Scans every matching file under `root`. Unreadable or unparsable files,
/// and imports the resolver skips, become warnings.
pub fn match_corpus(
    root: impl AsRef<Path>,
    mappings: &MappingSet,
    opts: &ScanOptions,
) -> Result<CorpusScan, ScanError> {
    let root = root.as_ref();
    if !root.is_dir() || std::fs::read_dir(root).is_err() {
        return Err(ScanError::BadRoot(root.display().to_string()));
    }
    let mut warnings = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        match entry {
            Ok(e) if e.file_type().is_file() => {
                let ext_ok = e
                    .path()
                    .extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| opts.extensions.iter().any(|want| want == x));
                if ext_ok {
                    files.push(e.into_path());
                }
            }
            Ok(_) => {}
            Err(err) => warnings.push(ScanWarning {
                file: err
                    .path()
                    .map(|p| relative_label(root, p))
                    .unwrap_or_default(),
                message: err.to_string(),
            }),
        }
    }
    let mut labelled: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| (relative_label(root, &p), p))
        .collect();
    labelled.sort();

    let per_file: Vec<Result<FileScan, ScanWarning>> = labelled
        .par_iter()
        .map(|(label, path)| {
            let source = std::fs::read_to_string(path).map_err(|e| ScanWarning {
                file: label.clone(),
                message: format!("cannot read: {e}"),
            })?;
            let analysis = analyze_source(&source, &opts.parse).map_err(|e| ScanWarning {
                file: label.clone(),
                message: e.to_string(),
            })?;
            let notes = analysis
                .index
                .warnings
                .iter()
                .map(|m| ScanWarning {
                    file: label.clone(),
                    message: m.clone(),
                })
                .collect();
            let matches = analysis
                .functions(label, &source)
                .into_iter()
                .filter_map(|f| match_function(f, mappings))
                .collect();
            Ok((matches, notes))
        })
        .collect();

    let mut scan = CorpusScan {
        files_scanned: labelled.len(),
        ..CorpusScan::default()
    };
    scan.warnings = warnings;
    for result in per_file {
        match result {
            Ok((mut matches, notes)) => {
                matches.sort_by_key(|m| m.function.span.0);
                scan.matches.extend(matches);
                scan.warnings.extend(notes);
            }
            Err(w) => scan.warnings.push(w),
        }
    }
    Ok(scan)
}

/// One line of `functions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub file: String,
    pub function: String,
    pub span: (usize, usize),
    pub body_start_line: usize,
    pub kind: FunctionKind,
    pub reference_line: usize,
    pub reference_column: usize,
    pub reference_callee: String,
    pub reference_fqn: Fqn,
    pub deprecated: Fqn,
    pub replacement: Fqn,
    pub library: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub source_lines: Vec<String>,
    #[serde(default)]
    pub context_imports: Vec<String>,
}

impl MatchedFunction {
    pub fn to_record(&self) -> FunctionRecord {
        let f = &self.function;
        FunctionRecord {
            id: sample_id(&f.file, &f.qualified_name, self.reference_call.line),
            file: f.file.clone(),
            function: f.qualified_name.clone(),
            span: f.span,
            body_start_line: f.body_start_line,
            kind: self.kind,
            reference_line: self.reference_call.line,
            reference_column: self.reference_call.column,
            reference_callee: self.reference_call.callee_text.clone(),
            reference_fqn: self
                .reference_call
                .fqn
                .clone()
                .expect("matched calls are resolved"),
            deprecated: self.mapping.deprecated.clone(),
            replacement: self.mapping.replacement.clone(),
            library: self.mapping.library.clone(),
            version: self.mapping.deprecated_in_version.clone(),
            source_lines: f.source_lines.clone(),
            context_imports: f.context_imports.clone(),
        }
    }
}

impl FunctionRecord {
    pub fn mapping(&self) -> ApiMapping {
        ApiMapping {
            library: self.library.clone(),
            deprecated: self.deprecated.clone(),
            replacement: self.replacement.clone(),
            deprecated_in_version: self.version.clone(),
        }
    }
}
