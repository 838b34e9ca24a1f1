//! Deprecation-aware completion: detect a deprecated call in a completion and
//! repair it, either by splicing in the replacement and regenerating the rest
//! of the line, or by regenerating under an explanatory prompt comment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{
    analyze_completion, annotate_with, resolution_binding, AnnotatedRecord, CompletionAnalysis,
    Label,
};
use crate::corpus::FunctionKind;
use crate::gateway::{
    complete, continue_from, CompletionBackend, ContinuationRequest, DecodingParams, GatewayError,
    GenerationRequest,
};
use crate::mapping::{ApiMapping, Fqn, MappingSet};
use crate::prompt::PromptSample;
use crate::syntax::ParseOptions;

/// Tag distinguishing regeneration requests for scripted lookups.
pub const INSERT_PROMPT_TAG: &str = "insert-prompt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixStrategy {
    ReplaceApi,
    InsertPrompt,
}

impl fmt::Display for FixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixStrategy::ReplaceApi => "replace-api",
            FixStrategy::InsertPrompt => "insert-prompt",
        })
    }
}

impl FromStr for FixStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replace-api" => Ok(FixStrategy::ReplaceApi),
            "insert-prompt" => Ok(FixStrategy::InsertPrompt),
            other => Err(format!(
                "unknown strategy `{other}` (expected replace-api or insert-prompt)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixStatus {
    Fixed,
    NotFixed,
    StrategyUnsupported,
    BackendError,
}

impl FixStatus {
    /// Counted in the fixed-rate denominator.
    pub fn attempted(self) -> bool {
        matches!(self, FixStatus::Fixed | FixStatus::NotFixed)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixError {
    #[error("completion has no call resolving to {0}")]
    DepNotFound(Fqn),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A ReplaceAPI prefix with any rendering caveats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrefix {
    pub prefix: String,
    pub warnings: Vec<String>,
}

/// How `rep` is spelled under the visible bindings: through the binding the
/// deprecated call used when it covers `rep`, else through the binding with
/// the longest target prefixing `rep`, else in full.
fn render_replacement(
    rep: &Fqn,
    used: Option<(String, Fqn)>,
    analysis: &CompletionAnalysis,
) -> (String, Option<String>) {
    let spell = |local: &str, target: &Fqn| {
        let rest = &rep.segments()[target.len()..];
        std::iter::once(local)
            .chain(rest.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(".")
    };
    if let Some((local, target)) = used.filter(|(_, t)| rep.starts_with(t)) {
        return (spell(&local, &target), None);
    }
    let best = analysis
        .bindings
        .iter()
        .filter(|b| rep.starts_with(&b.target))
        .max_by(|a, b| {
            a.target
                .len()
                .cmp(&b.target.len())
                .then_with(|| b.local.cmp(&a.local))
        });
    match best {
        Some(b) => (spell(&b.local, &b.target), None),
        None => (
            rep.dotted(),
            Some(format!(
                "`{}` is not bound in this scope; the fixed line needs `import {}`",
                rep.root(),
                rep.root()
            )),
        ),
    }
}

/// The completion cut at the first `dep` call's callee, with `rep` spelled in
/// its place.
pub fn replace_dep(
    comp: &str,
    dep: &Fqn,
    rep: &Fqn,
    sample: &PromptSample,
) -> Result<RenderedPrefix, FixError> {
    let analysis = analyze_completion(comp, sample, &ParseOptions::default());
    let call = analysis
        .find(dep)
        .ok_or_else(|| FixError::DepNotFound(dep.clone()))?;
    let (rendered, warning) = render_replacement(rep, resolution_binding(call), &analysis);
    let mut prefix = comp[..call.callee_span.0].to_owned();
    prefix.push_str(&rendered);
    Ok(RenderedPrefix {
        prefix,
        warnings: warning.into_iter().collect(),
    })
}

/// Two guidance comments aligned with the last non-blank prompt line.
pub fn create_rep_pmpt(comp: &str, dep: &Fqn, rep: &Fqn, pmpt_lines: &[String]) -> String {
    let indent = pmpt_lines
        .iter()
        .rev()
        .find(|l| !l.trim().is_empty())
        .map(|l| &l[..l.len() - l.trim_start().len()])
        .unwrap_or("");
    format!(
        "{indent}# {}\n{indent}# {dep} is deprecated, use {rep} instead and revise the return value and arguments.",
        comp.trim()
    )
}

/// Result of one Fix invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FixAttempt {
    pub strategy: FixStrategy,
    pub mapping: ApiMapping,
    /// Fixed line, when generation succeeded.
    pub completion: Option<String>,
    pub prefix: Option<String>,
    pub inserted_prompt: Option<String>,
    pub warnings: Vec<String>,
    pub error: Option<FixError>,
}

pub fn fix_replace_api(
    comp: &str,
    mapping: &ApiMapping,
    backend: &dyn CompletionBackend,
    sample: &PromptSample,
    params: &DecodingParams,
) -> FixAttempt {
    let mut attempt = FixAttempt {
        strategy: FixStrategy::ReplaceApi,
        mapping: mapping.clone(),
        completion: None,
        prefix: None,
        inserted_prompt: None,
        warnings: Vec::new(),
        error: None,
    };
    if !backend.descriptor().capabilities.supports_continuation {
        attempt.error = Some(
            GatewayError::StrategyUnsupported {
                backend: backend.descriptor().name.clone(),
            }
            .into(),
        );
        return attempt;
    }
    let rendered = match replace_dep(comp, &mapping.deprecated, &mapping.replacement, sample) {
        Ok(r) => r,
        Err(e) => {
            attempt.error = Some(e);
            return attempt;
        }
    };
    attempt.warnings = rendered.warnings;
    let pmpt = sample.prompt_text();
    let req = ContinuationRequest {
        prompt: &pmpt,
        prefix: &rendered.prefix,
        sample_id: Some(&sample.id),
    };
    match continue_from(backend, &req, params) {
        Ok(c) => attempt.completion = Some(format!("{}{}", rendered.prefix, c.suffix)),
        Err(e) => attempt.error = Some(e.into()),
    }
    attempt.prefix = Some(rendered.prefix);
    attempt
}

pub fn fix_insert_prompt(
    comp: &str,
    mapping: &ApiMapping,
    backend: &dyn CompletionBackend,
    sample: &PromptSample,
    params: &DecodingParams,
) -> FixAttempt {
    let inserted = create_rep_pmpt(comp, &mapping.deprecated, &mapping.replacement, &sample.prompt_lines);
    let augmented = format!("{}{inserted}\n", sample.prompt_text());
    let req = GenerationRequest::for_sample(&augmented, &sample.id).tagged(INSERT_PROMPT_TAG);
    let (completion, error) = match complete(backend, &req, params) {
        Ok(c) => (Some(c.text), None),
        Err(e) => (None, Some(e.into())),
    };
    FixAttempt {
        strategy: FixStrategy::InsertPrompt,
        mapping: mapping.clone(),
        completion,
        prefix: None,
        inserted_prompt: Some(inserted),
        warnings: Vec::new(),
        error,
    }
}

pub fn apply_fix(
    strategy: FixStrategy,
    comp: &str,
    mapping: &ApiMapping,
    backend: &dyn CompletionBackend,
    sample: &PromptSample,
    params: &DecodingParams,
) -> FixAttempt {
    match strategy {
        FixStrategy::ReplaceApi => fix_replace_api(comp, mapping, backend, sample, params),
        FixStrategy::InsertPrompt => fix_insert_prompt(comp, mapping, backend, sample, params),
    }
}

/// Outcome of the detect-and-fix loop over one completion.
#[derive(Debug, Clone, PartialEq)]
pub struct FixRun {
    pub original: String,
    /// Equal to `original` when no fix was applied or the fix failed.
    pub completion: String,
    pub attempt: Option<FixAttempt>,
    /// Fix invocations made; at most one.
    pub fix_invocations: usize,
}

/// Walks `mappings` in order and fixes `comp` with the first mapping whose
/// deprecated API it contains. At most one fix is made.
pub fn deprecation_aware_fix(
    comp: &str,
    sample: &PromptSample,
    mappings: &MappingSet,
    backend: &dyn CompletionBackend,
    strategy: FixStrategy,
    params: &DecodingParams,
) -> FixRun {
    let analysis = analyze_completion(comp, sample, &ParseOptions::default());
    let mut run = FixRun {
        original: comp.to_owned(),
        completion: comp.to_owned(),
        attempt: None,
        fix_invocations: 0,
    };
    for m in mappings.iter() {
        if analysis.find(&m.deprecated).is_some() {
            let attempt = apply_fix(strategy, comp, m, backend, sample, params);
            run.fix_invocations += 1;
            if let Some(fixed) = &attempt.completion {
                run.completion = fixed.clone();
            }
            run.attempt = Some(attempt);
            break;
        }
    }
    run
}

/// Generates a completion for the sample's prompt, then fixes it.
pub fn deprecation_aware_complete(
    sample: &PromptSample,
    mappings: &MappingSet,
    backend: &dyn CompletionBackend,
    strategy: FixStrategy,
    params: &DecodingParams,
) -> Result<FixRun, GatewayError> {
    let pmpt = sample.prompt_text();
    let comp = complete(backend, &GenerationRequest::for_sample(&pmpt, &sample.id), params)?;
    Ok(deprecation_aware_fix(&comp.text, sample, mappings, backend, strategy, params))
}

/// Up-to-dated samples whose completion was annotated bad.
pub fn build_eval_set(annotated: &[AnnotatedRecord]) -> Vec<&AnnotatedRecord> {
    annotated
        .iter()
        .filter(|r| r.sample().origin == FunctionKind::UpToDated && r.label == Label::Bad)
        .collect()
}

/// One line of `fixed.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixOutcome {
    pub id: String,
    pub backend: String,
    pub library: String,
    pub strategy: FixStrategy,
    pub original_completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_prompt: Option<String>,
    pub fixed_completion: String,
    pub fixed_label: Label,
    pub ground_truth_line: String,
    pub status: FixStatus,
    /// Mapping whose deprecated API triggered the fix, if any did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_mapping: Option<Fqn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs the fixing loop on an annotated record and labels the result
/// against the sample's own mapping.
pub fn fix_record(
    rec: &AnnotatedRecord,
    mappings: &MappingSet,
    backend: &dyn CompletionBackend,
    strategy: FixStrategy,
    params: &DecodingParams,
) -> FixOutcome {
    let sample = rec.sample();
    let comp = &rec.completion.completion;
    let run = deprecation_aware_fix(comp, sample, mappings, backend, strategy, params);
    let fixed_label = annotate_with(&run.completion, sample, None, &ParseOptions::default()).label;
    let mut outcome = FixOutcome {
        id: sample.id.clone(),
        backend: backend.descriptor().name.clone(),
        library: sample.library.clone(),
        strategy,
        original_completion: comp.clone(),
        prefix: None,
        inserted_prompt: None,
        fixed_completion: run.completion.clone(),
        fixed_label,
        ground_truth_line: sample.ground_truth_line.clone(),
        status: if fixed_label == Label::Good {
            FixStatus::Fixed
        } else {
            FixStatus::NotFixed
        },
        applied_mapping: None,
        warnings: Vec::new(),
        error: None,
    };
    if let Some(attempt) = run.attempt {
        outcome.prefix = attempt.prefix;
        outcome.inserted_prompt = attempt.inserted_prompt;
        outcome.applied_mapping = Some(attempt.mapping.deprecated);
        outcome.warnings = attempt.warnings;
        match attempt.error {
            Some(FixError::Gateway(GatewayError::StrategyUnsupported { .. })) => {
                outcome.status = FixStatus::StrategyUnsupported;
                outcome.error = Some("strategy unsupported by backend".into());
            }
            Some(FixError::Gateway(e)) => {
                outcome.status = FixStatus::BackendError;
                outcome.error = Some(e.to_string());
            }
            Some(e @ FixError::DepNotFound(_)) => {
                outcome.status = FixStatus::NotFixed;
                outcome.error = Some(e.to_string());
            }
            None => {}
        }
    }
    outcome
}
