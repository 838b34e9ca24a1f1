//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p depfix-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use depfix_core::annotate::{annotate, AnnotatedRecord, Label};
use depfix_core::corpus::{match_corpus, match_source, FunctionKind, MatchedFunction, ScanOptions};
use depfix_core::fix::{
    create_rep_pmpt, deprecation_aware_complete, fix_record, replace_dep, FixStatus, FixStrategy,
    INSERT_PROMPT_TAG,
};
use depfix_core::gateway::{CompletionRecord, DecodingParams, ScriptedBackend};
use depfix_core::metrics::{edit_similarity, exact_match};
use depfix_core::prompt::{build_prompt_from_match, Dataset, PromptSample};
use depfix_core::report::{build_report, GroupKey, MetricRow};
use depfix_core::resolve::analyze_source;
use depfix_core::syntax::ParseOptions;
use depfix_core::{load_mappings, ApiMapping, Fqn, MappingSet};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn mapping_set() -> MappingSet {
    load_mappings(fixtures().join("mappings.json")).expect("fixture mappings load")
}

fn fqn(s: &str) -> Fqn {
    Fqn::parse(s).unwrap()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn python_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "py") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn resolved_on_line(source: &str, line: usize) -> Vec<String> {
    let analysis = analyze_source(source, &ParseOptions::default()).unwrap();
    analysis
        .calls
        .iter()
        .filter(|c| c.line == line)
        .filter_map(|c| c.fqn.as_ref().map(Fqn::dotted))
        .collect()
}

fn c1_resolution() -> Outcome {
    let start = Instant::now();
    let corpus = fixtures().join("corpus");
    let files = python_files(&corpus);
    check(files.len() >= 12, || format!("corpus has {} files", files.len()))?;
    let all: String = files.iter().map(|f| std::fs::read_to_string(f).unwrap()).collect();
    for (form, needle) in [
        ("import-as", "import numpy as np"),
        ("from-import", "from torch.linalg import lstsq\n"),
        ("from-import-as", "from numpy import mean as avg"),
        ("plain import", "\nimport torch\n"),
    ] {
        check(all.contains(needle), || format!("no {form} statement in the corpus"))?;
    }

    #[derive(serde::Deserialize)]
    struct Expectation {
        file: String,
        line: usize,
        fqns: Vec<String>,
    }
    let text = std::fs::read_to_string(fixtures().join("resolution.json")).unwrap();
    let expectations: Vec<Expectation> = serde_json::from_str(&text).unwrap();
    let mut calls = 0;
    for e in &expectations {
        let source = std::fs::read_to_string(corpus.join(&e.file)).unwrap();
        let got = resolved_on_line(&source, e.line);
        check(got == e.fqns, || format!("{}:{} resolved {:?}, expected {:?}", e.file, e.line, got, e.fqns))?;
        calls += e.fqns.len();
    }

    let worked = [
        ("import pandas as pd\n\ndef f(df):\n    return pd.DataFrame.loc(df)\n", 4, "pandas.DataFrame.loc"),
        (
            "import pandas\n\ndef f(data):\n    dt = pandas.DataFrame(data)\n    return dt.loc()\n",
            5,
            "pandas.DataFrame.loc",
        ),
        ("from torch.linalg import lstsq\n\ndef f(A, B):\n    return lstsq(A, B)\n", 4, "torch.linalg.lstsq"),
    ];
    for (src, line, want) in worked {
        let got = resolved_on_line(src, line);
        check(got == [want], || format!("worked example resolved {got:?}, expected {want}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} files, {} expected calls and 3 worked examples exact in {} ms",
        files.len(),
        calls,
        elapsed.as_millis()
    ))
}

/// Every mapped FQN, dep or rep, by direct listing.
fn mapped_names(set: &MappingSet) -> BTreeSet<String> {
    set.iter()
        .flat_map(|m| [m.deprecated.dotted(), m.replacement.dotted()])
        .collect()
}

/// Checks one matched function against a scan of every call the file
/// contains inside that function and outside any nested definition.
fn first_match_violation(source: &str, m: &MatchedFunction, mapped: &BTreeSet<String>) -> Option<String> {
    let analysis = analyze_source(source, &ParseOptions::default()).unwrap();
    let f = &m.function;
    let nested: Vec<(usize, usize)> = analysis
        .functions(&f.file, source)
        .into_iter()
        .map(|g| g.span)
        .filter(|s| *s != f.span && s.0 > f.span.0 && s.1 <= f.span.1)
        .collect();
    let mut calls: Vec<_> = analysis
        .calls
        .iter()
        .filter(|c| c.line >= f.body_start_line && c.line <= f.span.1)
        .filter(|c| !nested.iter().any(|(a, b)| c.line >= *a && c.line <= *b))
        .collect();
    calls.sort_by_key(|c| (c.line, c.column));
    let first = calls
        .iter()
        .find(|c| c.fqn.as_ref().is_some_and(|q| mapped.contains(&q.dotted())))?;
    let r = &m.reference_call;
    if (first.line, first.column) != (r.line, r.column) {
        return Some(format!(
            "{}::{} reference at {}:{} but mapped call at {}:{}",
            f.file, f.qualified_name, r.line, r.column, first.line, first.column
        ));
    }
    let is_dep = m.mapping.deprecated == *r.fqn.as_ref().unwrap();
    if is_dep != (m.kind == FunctionKind::Outdated) {
        return Some(format!("{}::{} has the wrong kind", f.file, f.qualified_name));
    }
    None
}

const POOL: &[(&str, Option<(&str, bool)>)] = &[
    ("torch.lstsq(a, b)", Some(("torch.lstsq", true))),
    ("torch.linalg.lstsq(a, b)", Some(("torch.linalg.lstsq", false))),
    ("pd.DataFrame.ix(d, 0)", Some(("pandas.DataFrame.ix", true))),
    ("pd.DataFrame.loc(d)", Some(("pandas.DataFrame.loc", false))),
    ("tf.saved_model.loader.load(s, t, e)", Some(("tensorflow.saved_model.loader.load", true))),
    ("tf.saved_model.load(e)", Some(("tensorflow.saved_model.load", false))),
    ("scipy.misc.comb(n, k)", Some(("scipy.misc.comb", true))),
    ("scipy.special.comb(n, k)", Some(("scipy.special.comb", false))),
    ("sns.distplot(x)", Some(("seaborn.distplot", true))),
    ("sns.histplot(x)", Some(("seaborn.histplot", false))),
    ("print(a)", None),
    ("torch.zeros(3)", None),
    ("np.mean(a)", None),
    ("len(x)", None),
    ("helper(a)", None),
    ("pd.read_csv(p)", None),
];

const POOL_IMPORTS: &str = "import torch\nimport pandas as pd\nimport tensorflow as tf\nimport scipy\nimport seaborn as sns\nimport numpy as np\n";

fn c2_first_match() -> Outcome {
    let set = mapping_set();
    let mapped = mapped_names(&set);
    let corpus = fixtures().join("corpus");
    let scan = match_corpus(&corpus, &set, &ScanOptions::default()).unwrap();
    let mut violations = Vec::new();
    for m in &scan.matches {
        let source = std::fs::read_to_string(corpus.join(&m.function.file)).unwrap();
        violations.extend(first_match_violation(&source, m, &mapped));
    }
    let fixture_count = scan.matches.len();

    let mut rng = StdRng::seed_from_u64(2);
    let mut generated = 0;
    for round in 0..200 {
        let mut src = POOL_IMPORTS.to_owned();
        let mut expected = Vec::new();
        for fi in 0..rng.gen_range(1..4) {
            let name = format!("f{fi}");
            src.push_str(&format!("\n\ndef {name}(a, b, d, s, t, e, n, k, x, p):\n    a = a + 1\n"));
            let mut first = None;
            for si in 0..rng.gen_range(1..6) {
                let (text, hit) = POOL[rng.gen_range(0..POOL.len())];
                src.push_str(&format!("    r{si} = {text}\n"));
                if first.is_none() {
                    first = hit.map(|(q, dep)| (si + 1, q, dep));
                }
            }
            expected.push((name, first));
        }
        let found = match_source("gen.py", &src, &set, &ParseOptions::default()).unwrap();
        for (name, first) in expected {
            let m = found.iter().find(|m| m.function.qualified_name == name);
            match (first, m) {
                (None, None) => {}
                (Some((stmt, q, dep)), Some(m)) => {
                    let line_ok = m.reference_call.line == m.function.span.0 + 1 + stmt;
                    let fqn_ok = m.reference_call.fqn.as_ref().map(Fqn::dotted).as_deref() == Some(q);
                    let kind_ok = (m.kind == FunctionKind::Outdated) == dep;
                    if !(line_ok && fqn_ok && kind_ok) {
                        violations.push(format!("generated round {round} {name}: wrong reference"));
                    }
                    violations.extend(first_match_violation(&src, m, &mapped));
                    generated += 1;
                }
                (a, b) => violations.push(format!(
                    "generated round {round} {name}: expected match {}, got {}",
                    a.is_some(),
                    b.is_some()
                )),
            }
        }
    }
    check(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!("0 violations over {fixture_count} fixture and {generated} generated matches"))
}

fn c3_reconstruction() -> Outcome {
    let set = mapping_set();
    let mut n = 0;
    for dir in ["corpus", "small"] {
        let root = fixtures().join(dir);
        let scan = match_corpus(&root, &set, &ScanOptions::default()).unwrap();
        for m in &scan.matches {
            let Ok(sample) = build_prompt_from_match(m) else { continue };
            let source = std::fs::read_to_string(root.join(&sample.file)).unwrap();
            let lines: Vec<&str> = source.split('\n').collect();
            let (start, end) = m.function.span;
            let original = lines[start - 1..end].join("\n");
            let mut rebuilt = sample.prompt_text();
            rebuilt.push_str(&sample.ground_truth_line);
            for l in &lines[sample.reference_line..end] {
                rebuilt.push('\n');
                rebuilt.push_str(l);
            }
            check(rebuilt == original, || format!("{}::{} differs", sample.file, sample.function))?;
            n += 1;
        }
    }
    check(n >= 10, || format!("only {n} samples"))?;
    Ok(format!("{n} samples byte-exact"))
}

fn synthetic_sample(id: String, origin: FunctionKind, library: &str) -> PromptSample {
    PromptSample {
        id,
        origin,
        library: library.into(),
        deprecated: fqn(&format!("{library}.old")),
        replacement: fqn(&format!("{library}.new")),
        version: None,
        prompt_lines: vec!["def f():".into(), "    pass".into()],
        context_imports: Vec::new(),
        ground_truth_line: String::new(),
        file: "f.py".into(),
        function: "f".into(),
        reference_line: 3,
    }
}

fn synthetic_record(sample: PromptSample, backend: &str, label: Label) -> AnnotatedRecord {
    AnnotatedRecord {
        completion: CompletionRecord {
            sample,
            backend: backend.into(),
            completion: String::new(),
            raw: String::new(),
            truncated: false,
            params: DecodingParams::default(),
        },
        label,
        matched_fqn: None,
        matched_line_col: None,
        other_deprecated: Vec::new(),
        diagnostics: Vec::new(),
    }
}

/// `num / den` rounded half-up to three decimals, by long division.
fn decimal3(num: u64, den: u64) -> f64 {
    let q = num * 1000 / den;
    let r = num * 1000 % den;
    let q = if 2 * r >= den { q + 1 } else { q };
    format!("{}.{:03}", q / 1000, q % 1000).parse().unwrap()
}

fn levenshtein_dp(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn c4_metrics() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let backends = ["alpha", "beta", "gamma"];
    let libraries = ["numpy", "pandas", "torch"];
    let labels = [Label::Good, Label::Bad, Label::Irrelevant];
    let records: Vec<AnnotatedRecord> = (0..1000)
        .map(|i| {
            let origin = if rng.gen_bool(0.4) { FunctionKind::Outdated } else { FunctionKind::UpToDated };
            let lib = *libraries.choose(&mut rng).unwrap();
            let sample = synthetic_sample(format!("s{i}"), origin, lib);
            synthetic_record(sample, backends.choose(&mut rng).unwrap(), *labels.choose(&mut rng).unwrap())
        })
        .collect();

    let mut compared = 0;
    for group_by in [vec![GroupKey::Backend, GroupKey::Dataset], vec![GroupKey::Library]] {
        let report = build_report(&records, &[], &group_by);
        let rows: Vec<&MetricRow> = report.metric_rows().collect();
        for row in rows {
            let members: Vec<&AnnotatedRecord> = records
                .iter()
                .filter(|r| row.backend.as_ref().is_none_or(|b| *b == r.completion.backend))
                .filter(|r| row.library.as_ref().is_none_or(|l| *l == r.completion.sample.library))
                .filter(|r| match row.dataset {
                    None | Some(Dataset::All) => true,
                    Some(Dataset::O) => r.completion.sample.origin == FunctionKind::Outdated,
                    Some(Dataset::U) => r.completion.sample.origin == FunctionKind::UpToDated,
                })
                .collect();
            let (mut good, mut bad, mut irr) = (0u64, 0u64, 0u64);
            for r in &members {
                match r.label {
                    Label::Good => good += 1,
                    Label::Bad => bad += 1,
                    Label::Irrelevant => irr += 1,
                }
            }
            let n = members.len() as u64;
            let aup = (n > 0).then(|| decimal3(good + bad, n));
            let dur = (good + bad > 0).then(|| decimal3(bad, good + bad));
            let want = (n, good, bad, irr, aup, dur);
            let got = (row.n_samples, row.n_good, row.n_bad, row.n_irrelevant, row.aup, row.dur);
            check(want == got, || format!("row {row:?} disagrees with recount {want:?}"))?;
            compared += 1;
        }
    }

    let alphabet: Vec<char> = "abcxyz _().,=éλ".chars().collect();
    for _ in 0..200 {
        let word = |rng: &mut StdRng| -> String {
            let len = rng.gen_range(0..24);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
        };
        let a = word(&mut rng);
        let b = word(&mut rng);
        let (ta, tb) = (a.trim(), b.trim());
        let longest = ta.chars().count().max(tb.chars().count());
        let want = if longest == 0 { 1.0 } else { 1.0 - levenshtein_dp(ta, tb) as f64 / longest as f64 };
        let got = edit_similarity(&a, &b);
        check(got == want, || format!("ES({a:?}, {b:?}) = {got}, oracle {want}"))?;
    }

    // Right-hand pairs written out with every assignment target replaced by `_`.
    let curated: [(&str, &str, bool); 20] = [
        ("x = torch.linalg.lstsq(A, B)", "y = torch.linalg.lstsq(A, B)", true),
        ("X, _ = torch.linalg.lstsq(A, B)", "sol, res = torch.linalg.lstsq(A, B)", true),
        ("(a, b) = f(x)", "(c, d) = f(x)", true),
        ("(a, b) = f(x)", "c, d = f(x)", false),
        ("[a, b] = f(x)", "(c, d) = f(x)", false),
        ("a, *rest = f(x)", "b, *tail = f(x)", true),
        ("    return f(x)", "return f(x)", true),
        ("return f(x)", "return f(y)", false),
        ("self.model = load(p)", "model = load(p)", true),
        ("d['k'] = load(p)", "out = load(p)", true),
        ("a = b = g(1)", "c = d = g(1)", true),
        ("a = b = g(1)", "c = g(1)", false),
        ("x: int = f()", "y: int = f()", true),
        ("x: int = f()", "y: str = f()", false),
        ("x += f()", "y += f()", false),
        ("x += f()", "x += f()", true),
        ("f(a, b)", "f(a,b)", false),
        ("df.loc[0] = v", "row = v", true),
        ("x = f(", "y = f(", false),
        ("meta_graph_def = tf.saved_model.load(export_dir)", "m = tf.saved_model.load(export_dir)", true),
    ];
    for (pred, truth, want) in curated {
        let got = exact_match(pred, truth);
        check(got == want, || format!("EM({pred:?}, {truth:?}) = {got}, expected {want}"))?;
    }
    Ok(format!(
        "{compared} report rows match recounts over 1000 verdicts; ES exact on 200 pairs; EM 20/20 curated lines"
    ))
}

fn tf_sample() -> PromptSample {
    PromptSample {
        id: "load".into(),
        origin: FunctionKind::UpToDated,
        library: "tensorflow".into(),
        deprecated: fqn("tensorflow.saved_model.loader.load"),
        replacement: fqn("tensorflow.saved_model.load"),
        version: None,
        prompt_lines: vec!["def restore(sess, tags, export_dir):".into()],
        context_imports: vec!["import tensorflow as tf".into()],
        ground_truth_line: "    meta_graph_def = tf.saved_model.load(export_dir)".into(),
        file: "models/export.py".into(),
        function: "restore".into(),
        reference_line: 2,
    }
}

fn c5_replace_api() -> Outcome {
    let sample = tf_sample();
    let comp = "meta_graph_def=tf.saved_model.loader.load(export_dir)";
    let prefix = replace_dep(comp, &sample.deprecated, &sample.replacement, &sample)
        .map_err(|e| e.to_string())?
        .prefix;
    check(prefix == "meta_graph_def=tf.saved_model.load", || format!("prefix {prefix:?}"))?;

    let mappings = MappingSet::from_mappings(vec![ApiMapping {
        library: "tensorflow".into(),
        deprecated: sample.deprecated.clone(),
        replacement: sample.replacement.clone(),
        deprecated_in_version: None,
    }])
    .unwrap();
    let rec = synthetic_record(sample.clone(), "scripted", annotate(comp, &sample).label);
    let rec = AnnotatedRecord {
        completion: CompletionRecord {
            completion: comp.into(),
            ..rec.completion
        },
        ..rec
    };
    let params = DecodingParams::default();
    let mut results = Vec::new();
    for suffix in ["(export_dir)", "_meta_graph_def(sess, tags, export_dir)"] {
        let backend = ScriptedBackend::new("scripted").with_continuation(prefix.clone(), suffix);
        let outcome = fix_record(&rec, &mappings, &backend, FixStrategy::ReplaceApi, &params);
        let expected = format!("{prefix}{suffix}");
        check(outcome.fixed_completion == expected, || {
            format!("fixed completion {:?}, expected {expected:?}", outcome.fixed_completion)
        })?;
        results.push((outcome.fixed_label, outcome.status));
    }
    check(results[0] == (Label::Good, FixStatus::Fixed), || format!("\"(export_dir)\" gave {:?}", results[0]))?;
    check(results[1] == (Label::Irrelevant, FixStatus::NotFixed), || {
        format!("\"_meta_graph_def(...)\" gave {:?}", results[1])
    })?;
    Ok("prefix byte-exact; \"(export_dir)\" -> good/fixed; \"_meta_graph_def(...)\" -> irrelevant/not-fixed".into())
}

fn c6_insert_prompt() -> Outcome {
    let dep = fqn("torch.lstsq");
    let rep = fqn("torch.linalg.lstsq");
    let comp = "x = torch.lstsq(A,B)";
    let cases: [(&str, Vec<String>); 3] = [
        ("", vec!["import torch".into(), "A, B = load()".into(), "".into()]),
        ("    ", vec!["def solve(A, B):".into(), "    A = A.float()".into()]),
        (
            "        ",
            vec!["def solve(A, B):".into(), "    if A.dim() > 2:".into(), "        A = A[0]".into(), "   ".into()],
        ),
    ];
    for (indent, pmpt) in &cases {
        let want = String::new()
            + indent
            + "# x = torch.lstsq(A,B)\n"
            + indent
            + "# torch.lstsq is deprecated, use torch.linalg.lstsq instead and revise the return value and arguments.";
        let got = create_rep_pmpt(comp, &dep, &rep, pmpt);
        check(got == want, || format!("indent {}: {got:?}", indent.len()))?;
    }
    Ok("byte-exact at indents 0, 4 and 8".into())
}

fn depfix(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_depfix"))
        .args(args)
        .env_remove("DEPFIX_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = depfix(args)?;
    check(out.status.success(), || {
        format!("`depfix {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

/// The whole pipeline into `dir`; returns every output file's bytes.
fn pipeline(dir: &Path, strategies: &[&str]) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let f = fixtures();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let mappings = f.join("mappings.json");
    let mappings = mappings.to_str().unwrap();
    let backends = f.join("backends.json");
    let backends = backends.to_str().unwrap();
    let corpus = f.join("corpus");
    run_ok(&["--no-header", "scan", "--corpus", corpus.to_str().unwrap(), "--mappings", mappings, "--out", &p("functions.jsonl")])?;
    run_ok(&["--no-header", "prompts", "--functions", &p("functions.jsonl"), "--out", &p("prompts.jsonl")])?;
    run_ok(&[
        "--no-header", "complete", "--prompts", &p("prompts.jsonl"), "--backends", backends, "--backend", "fixture",
        "--out", &p("completions.jsonl"),
    ])?;
    run_ok(&[
        "--no-header", "annotate", "--completions", &p("completions.jsonl"), "--mappings", mappings, "--out",
        &p("annotated.jsonl"),
    ])?;
    let mut fixed = Vec::new();
    for s in strategies {
        let out = p(&format!("fixed-{s}.jsonl"));
        run_ok(&[
            "--no-header", "fix", "--annotated", &p("annotated.jsonl"), "--mappings", mappings, "--strategy", s,
            "--backends", backends, "--backend", "fixture", "--out", &out,
        ])?;
        fixed.push(out);
    }
    let all_fixed = dir.join("fixed.jsonl");
    let joined: Vec<u8> = fixed.iter().flat_map(|f| std::fs::read(f).unwrap()).collect();
    std::fs::write(&all_fixed, joined).unwrap();
    for format in ["json", "csv"] {
        run_ok(&[
            "--no-header", "report", "--annotated", &p("annotated.jsonl"), "--fixed", &p("fixed.jsonl"), "--format",
            format, "--out", &p(&format!("report.{format}")),
        ])?;
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
    }
    Ok(files)
}

fn metric_value(report: &Value, dataset: &str, key: &str) -> Option<f64> {
    report["rows"]
        .as_array()?
        .iter()
        .find(|r| r["type"] == "metric" && r["backend"] == "fixture" && r["dataset"] == dataset)?[key]
        .as_f64()
}

fn fix_value(report: &Value, strategy: &str, key: &str) -> Option<f64> {
    report["rows"]
        .as_array()?
        .iter()
        .find(|r| r["type"] == "fix" && r["strategy"] == strategy)?[key]
        .as_f64()
}

fn c7_end_to_end() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path(), &["replace-api", "insert-prompt"])?;
    let second = pipeline(b.path(), &["replace-api", "insert-prompt"])?;
    check(first == second, || {
        let diff: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        format!("runs differ in {diff:?}")
    })?;
    let report: Value = serde_json::from_slice(&first["report.json"]).unwrap();
    let got = [
        ("AUP(All)", metric_value(&report, "All", "aup"), 0.6),
        ("DUR(O)", metric_value(&report, "O", "dur"), 1.0),
        ("DUR(U)", metric_value(&report, "U", "dur"), 0.25),
        ("FR(replace-api)", fix_value(&report, "replace-api", "fr"), 1.0),
    ];
    for (name, value, want) in got {
        check(value.is_some_and(|v| (v - want).abs() <= 1e-9), || format!("{name} = {value:?}, expected {want}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "AUP 0.6, DUR(O) 1.0, DUR(U) 0.25, FR 1.0; {} files byte-identical across two runs in {} ms",
        first.len(),
        elapsed.as_millis()
    ))
}

fn c8_gating() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), &[])?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let f = fixtures();
    let out = depfix(&[
        "--no-header", "fix", "--annotated", &p("annotated.jsonl"), "--mappings", f.join("mappings.json").to_str().unwrap(),
        "--strategy", "replace-api", "--backends", f.join("backends.json").to_str().unwrap(), "--backend", "chat",
        "--out", &p("fixed.jsonl"),
    ])?;
    check(out.status.code() == Some(0), || format!("fix exited {:?}", out.status.code()))?;
    let text = std::fs::read_to_string(p("fixed.jsonl")).unwrap();
    let statuses: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["status"].as_str().unwrap().to_owned())
        .collect();
    check(!statuses.is_empty(), || "no outcomes".into())?;
    check(statuses.iter().all(|s| s == "strategy-unsupported"), || format!("statuses {statuses:?}"))?;
    run_ok(&[
        "--no-header", "report", "--annotated", &p("annotated.jsonl"), "--fixed", &p("fixed.jsonl"), "--format",
        "csv", "--out", &p("report.csv"),
    ])?;
    let csv = std::fs::read_to_string(p("report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let fr_col = header.iter().position(|h| *h == "fr").unwrap();
    let fix_rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("fix,")).collect();
    check(fix_rows.len() == 1, || format!("{} fix rows", fix_rows.len()))?;
    let fr = fix_rows[0].split(',').nth(fr_col).unwrap();
    check(fr == "—", || format!("FR rendered {fr:?}"))?;
    Ok(format!("{}/{} strategy-unsupported, FR rendered \"—\"", statuses.len(), statuses.len()))
}

/// Deprecated spellings under `POOL_IMPORTS` plus two from-imports, keyed by
/// the mapping they trigger.
const DEP_SPELLINGS: &[(&str, &str)] = &[
    ("torch.lstsq(a, b)", "torch.lstsq"),
    ("pd.DataFrame.ix(d, 0)", "pandas.DataFrame.ix"),
    ("tf.saved_model.loader.load(s, t, e)", "tensorflow.saved_model.loader.load"),
    ("tf.compat.v1.initialize_all_variables()", "tensorflow.compat.v1.initialize_all_variables"),
    ("scipy.misc.comb(n, k)", "scipy.misc.comb"),
    ("C(n, k)", "scipy.misc.comb"),
    ("np.asscalar(a)", "numpy.asscalar"),
    ("tts(x, y)", "sklearn.cross_validation.train_test_split"),
    ("sns.distplot(x)", "seaborn.distplot"),
];

const NEUTRAL: &[&str] = &[
    "torch.linalg.lstsq(a, b)",
    "sns.histplot(x)",
    "np.mean(a)",
    "len(x)",
    "helper(a)",
    "tf.saved_model.load(e)",
    "scipy.special.comb(n, k)",
];

fn c9_single_fix() -> Outcome {
    let set = mapping_set();
    let order: Vec<String> = set.iter().map(|m| m.deprecated.dotted()).collect();
    let mut imports: Vec<String> = POOL_IMPORTS.lines().map(str::to_owned).collect();
    imports.push("from scipy.misc import comb as C".into());
    imports.push("from sklearn.cross_validation import train_test_split as tts".into());
    let params = DecodingParams::default();
    let mut rng = StdRng::seed_from_u64(9);
    let mut by_k = [0usize; 4];
    for i in 0..500 {
        let n_dep = rng.gen_range(0..4);
        let mut terms: Vec<&str> = Vec::new();
        let mut hit: BTreeSet<&str> = BTreeSet::new();
        for _ in 0..n_dep {
            let (text, q) = *DEP_SPELLINGS.choose(&mut rng).unwrap();
            terms.push(text);
            hit.insert(q);
        }
        for _ in 0..rng.gen_range(0..3) {
            terms.push(NEUTRAL.choose(&mut rng).unwrap());
        }
        terms.shuffle(&mut rng);
        let comp = format!("    out = [{}]", terms.join(", "));
        let k = hit.len();
        by_k[n_dep] += 1;

        let mut sample = synthetic_sample(format!("r{i}"), FunctionKind::UpToDated, "torch");
        sample.prompt_lines = vec!["def run(a, b, d, s, t, e, n, k, x, y):".into(), "    a = a + 1".into()];
        sample.context_imports = imports.clone();
        let strategy = if i % 2 == 0 { FixStrategy::InsertPrompt } else { FixStrategy::ReplaceApi };
        let backend = ScriptedBackend::new("scripted")
            .with_completion(sample.id.clone(), comp.clone())
            .with_completion(format!("{}#{INSERT_PROMPT_TAG}", sample.id), "    out = []");
        let run = deprecation_aware_complete(&sample, &set, &backend, strategy, &params).map_err(|e| e.to_string())?;
        let want = k.min(1);
        check(run.fix_invocations == want, || {
            format!("{comp:?}: {} fix invocations for {k} matching mappings", run.fix_invocations)
        })?;
        check(backend.calls() == 1 + want, || format!("{comp:?}: {} backend calls", backend.calls()))?;
        let applied = run.attempt.as_ref().map(|a| a.mapping.deprecated.dotted());
        let earliest = order.iter().find(|q| hit.contains(q.as_str())).cloned();
        check(applied == earliest, || format!("{comp:?}: applied {applied:?}, expected {earliest:?}"))?;
    }
    Ok(format!(
        "500 completions ({} / {} / {} / {} with 0 / 1 / 2 / 3 deprecated calls), fix counter = min(1, k) for all",
        by_k[0], by_k[1], by_k[2], by_k[3]
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", "resolution fixtures [exact, <1 s]", c1_resolution),
        ("C2", "first-match oracle [0 violations]", c2_first_match),
        ("C3", "prompt reconstruction [byte-exact]", c3_reconstruction),
        ("C4", "metric oracles [exact]", c4_metrics),
        ("C5", "ReplaceAPI worked example [byte-exact]", c5_replace_api),
        ("C6", "InsertPrompt template [byte-exact]", c6_insert_prompt),
        ("C7", "end-to-end scripted run [abs 1e-9, byte-identical, <10 s]", c7_end_to_end),
        ("C8", "strategy gating [100% unsupported, FR \"—\"]", c8_gating),
        ("C9", "single-fix property [500 samples, exact]", c9_single_fix),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
