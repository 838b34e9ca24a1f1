mod config;
mod jsonl;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use depfix_core::annotate::{annotate_record, AnnotatedRecord, Label};
use depfix_core::corpus::{match_corpus, FunctionKind, FunctionRecord, ScanOptions};
use depfix_core::fix::{build_eval_set, fix_record, FixOutcome, FixStatus, FixStrategy};
use depfix_core::gateway::{
    build_backend, complete_sample, load_backend_configs, run_bounded, CompletionBackend,
    CompletionRecord, DecodingParams,
};
use depfix_core::prompt::{build_prompt, PromptSample};
use depfix_core::report::{build_report, parse_group_by};
use depfix_core::syntax::{ParseOptions, PythonVersion};
use depfix_core::{load_mappings, MappingSet};

use config::{pick, RunConfig};
use jsonl::Writer;

/// Failures mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input schema (exit 2).
    Usage(anyhow::Error),
    /// A backend kept failing after retries (exit 3).
    Backend(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "depfix", version, about = "Find and fix deprecated API usage in line-level code completions")]
struct Cli {
    /// JSON run configuration supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Omit the timestamped header line from JSONL outputs.
    #[arg(long, global = true)]
    no_header: bool,
    /// Skip ids already in the output file and append the rest.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find outdated and up-to-dated functions in a corpus.
    Scan(ScanArgs),
    /// Cut line-level prompts from matched functions.
    Prompts(PromptsArgs),
    /// Query a backend for each prompt.
    Complete(CompleteArgs),
    /// Label completions good, bad or irrelevant.
    Annotate(AnnotateArgs),
    /// Repair bad completions of up-to-dated samples.
    Fix(FixArgs),
    /// Aggregate metrics.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    mappings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated file extensions to scan.
    #[arg(long, value_delimiter = ',')]
    ext: Option<Vec<String>>,
    /// Python grammar version, e.g. 3.8.
    #[arg(long)]
    python: Option<PythonVersion>,
}

#[derive(Args)]
struct PromptsArgs {
    #[arg(long)]
    functions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BackendArgs {
    /// Backend config file (one object or an array).
    #[arg(long)]
    backends: Option<PathBuf>,
    /// Name of the backend to use.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    completions: Option<PathBuf>,
    #[arg(long)]
    mappings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    python: Option<PythonVersion>,
}

#[derive(Args)]
struct FixArgs {
    #[arg(long)]
    annotated: Option<PathBuf>,
    #[arg(long)]
    mappings: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<FixStrategy>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    annotated: Option<PathBuf>,
    #[arg(long)]
    fixed: Option<PathBuf>,
    /// Comma-separated keys from backend, library, dataset.
    #[arg(long, default_value = "backend,dataset")]
    group_by: String,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Globals {
    cfg: RunConfig,
    header: bool,
    resume: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(inner) | CliError::Backend(inner)) = &e;
            eprintln!("error: {inner:#}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = Globals {
        cfg,
        header: !cli.no_header,
        resume: cli.resume,
    };
    match cli.command {
        Command::Scan(a) => scan(&g, a),
        Command::Prompts(a) => prompts(&g, a),
        Command::Complete(a) => complete(&g, a),
        Command::Annotate(a) => annotate(&g, a),
        Command::Fix(a) => fix(&g, a),
        Command::Report(a) => report(&g, a),
    }
}

fn mappings(path: &Path) -> Result<MappingSet, CliError> {
    let set = load_mappings(path)
        .with_context(|| format!("cannot load mappings {}", path.display()))
        .map_err(CliError::Usage)?;
    for w in set.warnings() {
        eprintln!("warning: {}: {}", path.display(), w.message);
    }
    Ok(set)
}

fn parse_options(g: &Globals, flag: Option<PythonVersion>) -> ParseOptions {
    ParseOptions {
        version: flag.or(g.cfg.python).unwrap_or_default(),
    }
}

fn backend(g: &Globals, a: &BackendArgs) -> Result<Box<dyn CompletionBackend>, CliError> {
    let file = pick(a.backends.clone(), &g.cfg.backends, "backends", "backends")?;
    let name = pick(a.backend.clone(), &g.cfg.backend, "backend", "backend")?;
    let configs = load_backend_configs(&file).map_err(|e| CliError::Usage(e.into()))?;
    let cfg = configs.iter().find(|c| c.name == name).ok_or_else(|| {
        let known: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
        CliError::Usage(anyhow::anyhow!(
            "no backend `{name}` in {} (known: {})",
            file.display(),
            known.join(", ")
        ))
    })?;
    let base = file.parent().unwrap_or(Path::new(""));
    build_backend(cfg, base).map_err(|e| CliError::Usage(e.into()))
}

fn params(g: &Globals, a: &BackendArgs) -> Result<DecodingParams, CliError> {
    let p = DecodingParams::greedy(a.max_new_tokens.or(g.cfg.max_new_tokens).unwrap_or(50));
    p.validate().map_err(|e| CliError::Usage(e.into()))?;
    Ok(p)
}

fn concurrency(g: &Globals, a: &BackendArgs) -> usize {
    a.concurrency.or(g.cfg.concurrency).unwrap_or(4).max(1)
}

fn scan(g: &Globals, a: ScanArgs) -> Result<(), CliError> {
    let corpus = pick(a.corpus, &g.cfg.corpus, "corpus", "corpus")?;
    let set = mappings(&pick(a.mappings, &g.cfg.mappings, "mappings", "mappings")?)?;
    let out = pick(a.out, &g.cfg.outputs.functions, "out", "outputs.functions")?;
    let opts = ScanOptions {
        parse: parse_options(g, a.python),
        extensions: a
            .ext
            .or_else(|| g.cfg.extensions.clone())
            .unwrap_or_else(|| vec!["py".into()])
            .into_iter()
            .map(|e| e.trim_start_matches('.').to_owned())
            .collect(),
    };
    let scan = match_corpus(&corpus, &set, &opts).map_err(|e| CliError::Usage(e.into()))?;
    for w in &scan.warnings {
        eprintln!("warning: {}: {}", w.file, w.message);
    }
    let done = if g.resume { jsonl::existing_ids(&out, "id")? } else { Default::default() };
    let mut w = Writer::create(&out, "scan", g.header, g.resume)?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for m in &scan.matches {
        let rec = m.to_record();
        let c = counts.entry(rec.library.clone()).or_default();
        match rec.kind {
            FunctionKind::Outdated => c.0 += 1,
            FunctionKind::UpToDated => c.1 += 1,
        }
        if !done.contains(&rec.id) {
            w.write(&rec)?;
        }
    }
    w.finish()?;
    println!("scanned {} files, {} matched functions", scan.files_scanned, scan.matches.len());
    println!("{:<16} {:>9} {:>12} {:>7}", "library", "outdated", "up-to-dated", "total");
    let (mut to, mut tu) = (0, 0);
    for (lib, (o, u)) in &counts {
        println!("{lib:<16} {o:>9} {u:>12} {:>7}", o + u);
        to += o;
        tu += u;
    }
    println!("{:<16} {to:>9} {tu:>12} {:>7}", "total", to + tu);
    Ok(())
}

fn prompts(g: &Globals, a: PromptsArgs) -> Result<(), CliError> {
    let input = pick(a.functions, &g.cfg.outputs.functions, "functions", "outputs.functions")?;
    let out = pick(a.out, &g.cfg.outputs.prompts, "out", "outputs.prompts")?;
    let records: Vec<FunctionRecord> = jsonl::read(&input, "functions")?;
    let done = if g.resume { jsonl::existing_ids(&out, "id")? } else { Default::default() };
    let mut w = Writer::create(&out, "prompts", g.header, g.resume)?;
    let (mut written, mut rejected) = (0, 0);
    for rec in &records {
        match build_prompt(rec) {
            Ok(sample) => {
                written += 1;
                if !done.contains(&sample.id) {
                    w.write(&sample)?;
                }
            }
            Err(r) => {
                rejected += 1;
                eprintln!("rejected {} ({}:{}): {}", r.id, r.file, r.function, r.reason);
            }
        }
    }
    w.finish()?;
    println!("{written} prompts, {rejected} rejected");
    Ok(())
}

fn complete(g: &Globals, a: CompleteArgs) -> Result<(), CliError> {
    let input = pick(a.prompts, &g.cfg.outputs.prompts, "prompts", "outputs.prompts")?;
    let out = pick(a.out, &g.cfg.outputs.completions, "out", "outputs.completions")?;
    let backend = backend(g, &a.backend)?;
    let params = params(g, &a.backend)?;
    let samples: Vec<PromptSample> = jsonl::read(&input, "prompts")?;
    let done = if g.resume { jsonl::existing_ids(&out, "id")? } else { Default::default() };
    let pending: Vec<&PromptSample> = samples.iter().filter(|s| !done.contains(&s.id)).collect();
    let results = run_bounded(&pending, concurrency(g, &a.backend), |s| {
        complete_sample(backend.as_ref(), s, &params)
    });
    let mut w = Writer::create(&out, "complete", g.header, g.resume)?;
    let mut failures = Vec::new();
    for (s, r) in pending.iter().zip(results) {
        match r {
            Ok(rec) => w.write(&rec)?,
            Err(e) => failures.push(format!("{}: {e}", s.id)),
        }
    }
    w.finish()?;
    println!(
        "{} completions from {}, {} failed",
        pending.len() - failures.len(),
        backend.descriptor().name,
        failures.len()
    );
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed {f}");
    }
    Err(CliError::Backend(anyhow::anyhow!(
        "{} sample(s) could not be completed; rerun with --resume to retry them",
        failures.len()
    )))
}

fn annotate(g: &Globals, a: AnnotateArgs) -> Result<(), CliError> {
    let input = pick(a.completions, &g.cfg.outputs.completions, "completions", "outputs.completions")?;
    let set = mappings(&pick(a.mappings, &g.cfg.mappings, "mappings", "mappings")?)?;
    let out = pick(a.out, &g.cfg.outputs.annotated, "out", "outputs.annotated")?;
    let opts = parse_options(g, a.python);
    let records: Vec<CompletionRecord> = jsonl::read(&input, "completions")?;
    let done = if g.resume { jsonl::existing_ids(&out, "id")? } else { Default::default() };
    let annotated: Vec<AnnotatedRecord> = records
        .par_iter()
        .filter(|r| !done.contains(&r.sample.id))
        .map(|r| annotate_record(r, Some(&set), &opts))
        .collect();
    let mut w = Writer::create(&out, "annotate", g.header, g.resume)?;
    let mut counts = [0usize; 3];
    for r in &annotated {
        counts[r.label as usize] += 1;
        w.write(r)?;
    }
    w.finish()?;
    println!(
        "{} annotated: {} good, {} bad, {} irrelevant",
        annotated.len(),
        counts[Label::Good as usize],
        counts[Label::Bad as usize],
        counts[Label::Irrelevant as usize]
    );
    Ok(())
}

fn fix(g: &Globals, a: FixArgs) -> Result<(), CliError> {
    let input = pick(a.annotated, &g.cfg.outputs.annotated, "annotated", "outputs.annotated")?;
    let set = mappings(&pick(a.mappings, &g.cfg.mappings, "mappings", "mappings")?)?;
    let strategy = pick(a.strategy, &g.cfg.strategy, "strategy", "strategy")?;
    let out = pick(a.out, &g.cfg.outputs.fixed, "out", "outputs.fixed")?;
    let backend = backend(g, &a.backend)?;
    let params = params(g, &a.backend)?;
    if strategy == FixStrategy::ReplaceApi && !backend.descriptor().capabilities.supports_continuation {
        eprintln!(
            "warning: backend `{}` cannot continue from a prefix; replace-api outcomes will be strategy-unsupported",
            backend.descriptor().name
        );
    }
    let records: Vec<AnnotatedRecord> = jsonl::read(&input, "annotated")?;
    let done = if g.resume { jsonl::existing_ids(&out, "id")? } else { Default::default() };
    let eval: Vec<&AnnotatedRecord> = build_eval_set(&records)
        .into_iter()
        .filter(|r| !done.contains(&r.sample().id))
        .collect();
    let outcomes: Vec<FixOutcome> = run_bounded(&eval, concurrency(g, &a.backend), |r| {
        fix_record(r, &set, backend.as_ref(), strategy, &params)
    });
    let mut w = Writer::create(&out, "fix", g.header, g.resume)?;
    let mut counts: BTreeMap<FixStatus, usize> = BTreeMap::new();
    for o in &outcomes {
        *counts.entry(o.status).or_default() += 1;
        w.write(o)?;
    }
    w.finish()?;
    let n = |s| counts.get(&s).copied().unwrap_or(0);
    println!(
        "{} samples in the evaluation set: {} fixed, {} not fixed, {} unsupported, {} backend errors",
        outcomes.len(),
        n(FixStatus::Fixed),
        n(FixStatus::NotFixed),
        n(FixStatus::StrategyUnsupported),
        n(FixStatus::BackendError)
    );
    if n(FixStatus::BackendError) > 0 {
        for o in outcomes.iter().filter(|o| o.status == FixStatus::BackendError) {
            eprintln!("failed {}: {}", o.id, o.error.as_deref().unwrap_or("backend error"));
        }
        return Err(CliError::Backend(anyhow::anyhow!(
            "{} fix attempt(s) failed at the backend",
            n(FixStatus::BackendError)
        )));
    }
    Ok(())
}

fn report(g: &Globals, a: ReportArgs) -> Result<(), CliError> {
    let keys = parse_group_by(&a.group_by).map_err(|e| CliError::Usage(e.into()))?;
    let input = pick(a.annotated, &g.cfg.outputs.annotated, "annotated", "outputs.annotated")?;
    let annotated: Vec<AnnotatedRecord> = jsonl::read(&input, "annotated")?;
    let fixed_path = a.fixed.or_else(|| g.cfg.outputs.fixed.clone().filter(|p| p.exists()));
    let fixed: Vec<FixOutcome> = match &fixed_path {
        Some(p) => jsonl::read(p, "fixed")?,
        None => Vec::new(),
    };
    let r = build_report(&annotated, &fixed, &keys);
    let text = match a.format {
        Format::Json => r.to_json(),
        Format::Csv => r.to_csv(),
    };
    match a.out.or_else(|| g.cfg.outputs.report.clone()) {
        Some(p) => std::fs::write(&p, text)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(CliError::Usage),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
