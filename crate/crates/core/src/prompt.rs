//! Line-level completion prompts cut from matched functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{FunctionKind, FunctionRecord, MatchedFunction};
use crate::mapping::{ApiMapping, Fqn};

/// Which dataset a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    /// Samples from outdated functions.
    O,
    /// Samples from up-to-dated functions.
    U,
    All,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::O => "O",
            Dataset::U => "U",
            Dataset::All => "All",
        })
    }
}

impl From<FunctionKind> for Dataset {
    fn from(k: FunctionKind) -> Self {
        match k {
            FunctionKind::Outdated => Dataset::O,
            FunctionKind::UpToDated => Dataset::U,
        }
    }
}

/// One line of `prompts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub id: String,
    pub origin: FunctionKind,
    pub library: String,
    pub deprecated: Fqn,
    pub replacement: Fqn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub prompt_lines: Vec<String>,
    #[serde(default)]
    pub context_imports: Vec<String>,
    pub ground_truth_line: String,
    pub file: String,
    pub function: String,
    pub reference_line: usize,
}

impl PromptSample {
    pub fn mapping(&self) -> ApiMapping {
        ApiMapping {
            library: self.library.clone(),
            deprecated: self.deprecated.clone(),
            replacement: self.replacement.clone(),
            deprecated_in_version: self.version.clone(),
        }
    }

    pub fn dataset(&self) -> Dataset {
        self.origin.into()
    }

    /// The text sent to a model: prompt lines, each newline-terminated, so
    /// generation starts at the beginning of the next line.
    pub fn prompt_text(&self) -> String {
        prompt_text(&self.prompt_lines)
    }
}

pub fn prompt_text(lines: &[String]) -> String {
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRejection {
    pub id: String,
    pub file: String,
    pub function: String,
    pub reason: String,
}

/// Cuts a prompt at the reference invocation line. The prompt keeps the
/// header and every body line before the reference; a reference on the first
/// body line (or in the header) leaves no body context and is rejected.
pub fn build_prompt(rec: &FunctionRecord) -> Result<PromptSample, PromptRejection> {
    let reject = |reason: &str| PromptRejection {
        id: rec.id.clone(),
        file: rec.file.clone(),
        function: rec.function.clone(),
        reason: reason.to_owned(),
    };
    let (start, end) = rec.span;
    if rec.reference_line < start || rec.reference_line > end {
        return Err(reject("reference line outside function span"));
    }
    if rec.source_lines.len() != end - start + 1 {
        return Err(reject("source lines do not cover the function span"));
    }
    if rec.reference_line <= rec.body_start_line {
        return Err(reject("empty prompt"));
    }
    let cut = rec.reference_line - start;
    Ok(PromptSample {
        id: rec.id.clone(),
        origin: rec.kind,
        library: rec.library.clone(),
        deprecated: rec.deprecated.clone(),
        replacement: rec.replacement.clone(),
        version: rec.version.clone(),
        prompt_lines: rec.source_lines[..cut].to_vec(),
        context_imports: rec.context_imports.clone(),
        ground_truth_line: rec.source_lines[cut].clone(),
        file: rec.file.clone(),
        function: rec.function.clone(),
        reference_line: rec.reference_line,
    })
}

pub fn build_prompt_from_match(m: &MatchedFunction) -> Result<PromptSample, PromptRejection> {
    build_prompt(&m.to_record())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDataset {
    pub label: Dataset,
    pub samples: Vec<PromptSample>,
}

impl PromptDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Stable split into the outdated and up-to-dated datasets.
pub fn partition(samples: impl IntoIterator<Item = PromptSample>) -> (PromptDataset, PromptDataset) {
    let (o, u): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .partition(|s| s.origin == FunctionKind::Outdated);
    (
        PromptDataset {
            label: Dataset::O,
            samples: o,
        },
        PromptDataset {
            label: Dataset::U,
            samples: u,
        },
    )
}
