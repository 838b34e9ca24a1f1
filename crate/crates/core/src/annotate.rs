//! Verdicts for predicted lines.
//!
//! A completion is analysed together with the sample's context imports and
//! prompt so that aliases and object types visible at the completion point
//! resolve exactly as they would in the original file.

use serde::{Deserialize, Serialize};

use crate::gateway::CompletionRecord;
use crate::mapping::{ApiMapping, Fqn, MappingSet};
use crate::prompt::PromptSample;
use crate::resolve::{resolve_callee, AliasTable, Evidence, FileAnalysis, ResolvedCall};
use crate::syntax::{parse_module_tolerant, ParseOptions, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Good,
    Bad,
    Irrelevant,
}

impl Label {
    pub fn is_plausible(self) -> bool {
        matches!(self, Label::Good | Label::Bad)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    /// The call that decided the label; absent for irrelevant.
    pub matched_call: Option<ResolvedCall>,
    /// Deprecated APIs of other mappings found in the line.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other_deprecated: Vec<Fqn>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsable: bool,
}

impl Verdict {
    pub fn plausible(&self) -> bool {
        self.label.is_plausible()
    }
}

/// A name binding visible at the completion point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibleBinding {
    pub local: String,
    pub target: Fqn,
}

/// Calls found in a completion line, with spans relative to the line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompletionAnalysis {
    pub calls: Vec<ResolvedCall>,
    /// Import aliases and typed variables in scope where the line sits.
    pub bindings: Vec<VisibleBinding>,
    pub unparsable: bool,
    /// The line only parsed inside a synthetic wrapper function.
    pub used_fallback: bool,
}

impl CompletionAnalysis {
    /// First call resolving to `fqn`, in left-to-right order.
    pub fn find(&self, fqn: &Fqn) -> Option<&ResolvedCall> {
        self.calls.iter().find(|c| c.fqn.as_ref() == Some(fqn))
    }
}

fn leading_ws(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

fn dedent<'a>(line: &'a str, indent: &str) -> &'a str {
    line.strip_prefix(indent).unwrap_or_else(|| line.trim_start())
}

struct Context {
    text: String,
    /// Indent of the prompt's first line, removed from every prompt line.
    base_indent: String,
    /// Indent a bare completion line would take.
    auto_indent: String,
    /// Byte offset of the last prompt line's start, for scope lookup.
    last_line_start: usize,
}

fn build_context(sample: &PromptSample) -> Context {
    let mut text = String::new();
    for imp in &sample.context_imports {
        text.push_str(imp.trim());
        text.push('\n');
    }
    let base_indent = sample
        .prompt_lines
        .first()
        .map(|l| leading_ws(l).to_owned())
        .unwrap_or_default();
    let mut last_line_start = text.len();
    let mut auto_indent = String::new();
    for line in &sample.prompt_lines {
        let line = dedent(line, &base_indent);
        if !line.trim().is_empty() {
            last_line_start = text.len();
            auto_indent = leading_ws(line).to_owned();
            if line.trim_end().ends_with(':') {
                auto_indent.push_str("    ");
            }
        }
        text.push_str(line);
        text.push('\n');
    }
    Context {
        text,
        base_indent,
        auto_indent,
        last_line_start,
    }
}

fn bindings_at(analysis: &FileAnalysis, scope: Scope, offset: usize) -> Vec<VisibleBinding> {
    let chain = analysis.index.scope_chain(scope);
    let mut out: Vec<VisibleBinding> = analysis
        .aliases
        .visible_at(&chain, offset)
        .into_iter()
        .map(|e| VisibleBinding {
            local: e.local.clone(),
            target: e.target.clone(),
        })
        .collect();
    if let Some(s) = scope {
        let table = &analysis.objects[s];
        let mut vars: Vec<&str> = table.bindings().iter().map(|b| b.variable.as_str()).collect();
        vars.sort_unstable();
        vars.dedup();
        for v in vars {
            if let Some(b) = table.lookup(v, offset) {
                out.retain(|x| x.local != v);
                out.push(VisibleBinding {
                    local: v.to_owned(),
                    target: b.fqn.clone().expect("lookup filters cleared bindings"),
                });
            }
        }
    }
    out
}

/// Resolves every call in `comp` under the sample's context.
pub fn analyze_completion(comp: &str, sample: &PromptSample, opts: &ParseOptions) -> CompletionAnalysis {
    let comp = comp.split('\n').next().unwrap_or("");
    let comp = comp.strip_suffix('\r').unwrap_or(comp);
    let body = comp.trim_start();
    let lead = comp.len() - body.len();
    if body.trim().is_empty() {
        return CompletionAnalysis::default();
    }
    let ctx = build_context(sample);

    let indent = if lead == 0 {
        ctx.auto_indent.clone()
    } else {
        leading_ws(dedent(comp, &ctx.base_indent)).to_owned()
    };
    let mut text = ctx.text.clone();
    let comp_start = text.len() + indent.len();
    text.push_str(&indent);
    text.push_str(body);
    let comp_end = text.len();
    text.push('\n');

    let (index, errors) = parse_module_tolerant(&text, opts);
    if !errors.iter().any(|e| e.byte_range.1 > ctx.text.len()) {
        let analysis = FileAnalysis::from_index(index);
        let calls = analysis
            .index
            .calls
            .iter()
            .zip(&analysis.calls)
            .filter(|(c, _)| c.start_byte >= comp_start && c.start_byte < comp_end)
            .map(|(_, r)| shift(r, comp, comp_start, lead, sample.reference_line))
            .collect();
        let scope = analysis.index.function_at(comp_start);
        return CompletionAnalysis {
            calls,
            bindings: bindings_at(&analysis, scope, comp_start),
            unparsable: false,
            used_fallback: false,
        };
    }
    fallback(body, lead, &ctx, sample, opts)
}

const WRAPPER_HEAD: &str = "def __depfix_completion__():\n    ";

/// Parses the trimmed line inside a synthetic function and resolves its
/// calls against the context as it stands at the end of the prompt.
fn fallback(
    body: &str,
    lead: usize,
    ctx: &Context,
    sample: &PromptSample,
    opts: &ParseOptions,
) -> CompletionAnalysis {
    let body = body.trim_end();
    let wrapped = format!("{WRAPPER_HEAD}{body}\n");
    let (windex, werrors) = parse_module_tolerant(&wrapped, opts);
    if !werrors.is_empty() {
        return CompletionAnalysis {
            unparsable: true,
            used_fallback: true,
            ..CompletionAnalysis::default()
        };
    }
    let (cindex, _) = parse_module_tolerant(&ctx.text, opts);
    let context = FileAnalysis::from_index(cindex);
    let scope = context.index.function_at(ctx.last_line_start);
    let chain = context.index.scope_chain(scope);
    let at = ctx.text.len();
    let objects = scope.map(|s| &context.objects[s]);
    let aliases: &AliasTable = &context.aliases;
    let calls = windex
        .calls
        .iter()
        .map(|c| {
            let (fqn, resolution, evidence) = resolve_callee(&c.callee, &chain, at, aliases, objects);
            let start = c.callee_start - WRAPPER_HEAD.len();
            ResolvedCall {
                fqn,
                line: sample.reference_line,
                column: body[..start].chars().count() + lead,
                callee_text: c.callee_text.clone(),
                callee_span: (start + lead, c.callee_end - WRAPPER_HEAD.len() + lead),
                resolution,
                evidence,
            }
        })
        .collect();
    CompletionAnalysis {
        calls,
        bindings: bindings_at(&context, scope, at),
        unparsable: false,
        used_fallback: true,
    }
}

/// Moves a call resolved in the analysis text back to line coordinates.
fn shift(r: &ResolvedCall, comp: &str, comp_start: usize, lead: usize, line: usize) -> ResolvedCall {
    let start = r.callee_span.0 - comp_start + lead;
    let end = r.callee_span.1 - comp_start + lead;
    ResolvedCall {
        line,
        column: comp[..start].chars().count(),
        callee_span: (start, end),
        ..r.clone()
    }
}

/// Labels a completion against the sample's own mapping. `mappings`, when
/// given, feeds the side channel of other deprecated APIs.
pub fn annotate_with(
    comp: &str,
    sample: &PromptSample,
    mappings: Option<&MappingSet>,
    opts: &ParseOptions,
) -> Verdict {
    let analysis = analyze_completion(comp, sample, opts);
    verdict_from(&analysis, &sample.mapping(), mappings)
}

pub fn annotate(comp: &str, sample: &PromptSample) -> Verdict {
    annotate_with(comp, sample, None, &ParseOptions::default())
}

pub fn verdict_from(
    analysis: &CompletionAnalysis,
    mapping: &ApiMapping,
    mappings: Option<&MappingSet>,
) -> Verdict {
    let decided = analysis.calls.iter().find_map(|c| {
        let fqn = c.fqn.as_ref()?;
        if *fqn == mapping.deprecated {
            Some((Label::Bad, c))
        } else if *fqn == mapping.replacement {
            Some((Label::Good, c))
        } else {
            None
        }
    });
    let mut other_deprecated = Vec::new();
    if let Some(set) = mappings {
        for fqn in analysis.calls.iter().filter_map(|c| c.fqn.as_ref()) {
            if *fqn != mapping.deprecated
                && set.find_by_deprecated(fqn).is_some()
                && !other_deprecated.contains(fqn)
            {
                other_deprecated.push(fqn.clone());
            }
        }
    }
    match decided {
        Some((label, call)) => Verdict {
            label,
            matched_call: Some(call.clone()),
            other_deprecated,
            unparsable: false,
        },
        None => Verdict {
            label: Label::Irrelevant,
            matched_call: None,
            other_deprecated,
            unparsable: analysis.unparsable,
        },
    }
}

/// Whether some call in `comp` resolves to `dep` under the sample's context.
pub fn contains(comp: &str, dep: &Fqn, sample: &PromptSample) -> bool {
    analyze_completion(comp, sample, &ParseOptions::default())
        .find(dep)
        .is_some()
}

/// One line of `annotated.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    #[serde(flatten)]
    pub completion: CompletionRecord,
    pub label: Label,
    pub matched_fqn: Option<Fqn>,
    /// Line in the source file and character column in the completion.
    pub matched_line_col: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other_deprecated: Vec<Fqn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl AnnotatedRecord {
    pub fn sample(&self) -> &PromptSample {
        &self.completion.sample
    }
}

pub fn annotate_record(
    rec: &CompletionRecord,
    mappings: Option<&MappingSet>,
    opts: &ParseOptions,
) -> AnnotatedRecord {
    let analysis = analyze_completion(&rec.completion, &rec.sample, opts);
    let verdict = verdict_from(&analysis, &rec.sample.mapping(), mappings);
    let mut diagnostics = Vec::new();
    if verdict.unparsable {
        diagnostics.push("unparsable completion".to_owned());
    } else if analysis.used_fallback {
        diagnostics.push("parsed in isolation".to_owned());
    }
    if rec.truncated {
        diagnostics.push("completion hit the token limit".to_owned());
    }
    let matched = verdict.matched_call.as_ref();
    AnnotatedRecord {
        completion: rec.clone(),
        label: verdict.label,
        matched_fqn: matched.and_then(|c| c.fqn.clone()),
        matched_line_col: matched.map(|c| (c.line, c.column)),
        other_deprecated: verdict.other_deprecated,
        diagnostics,
    }
}

/// The binding `call` was resolved through, as (local name, target).
pub fn resolution_binding(call: &ResolvedCall) -> Option<(String, Fqn)> {
    call.evidence.first().map(|e| match e {
        Evidence::Import { local, target, .. } => (local.clone(), target.clone()),
        Evidence::Object { variable, fqn, .. } => (variable.clone(), fqn.clone()),
    })
}
