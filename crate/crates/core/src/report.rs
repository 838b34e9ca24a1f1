//! Grouped metric tables over annotated and fixed records.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotatedRecord, Label};
use crate::fix::{FixOutcome, FixStatus, FixStrategy};
use crate::metrics::{aup, dur, edit_similarity, exact_match, fixed_rate, Ratio};
use crate::prompt::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKey {
    Backend,
    Library,
    Dataset,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("unknown group key `{0}` (expected backend, library or dataset)")]
    UnknownKey(String),
}

impl FromStr for GroupKey {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s.trim() {
            "backend" => Ok(GroupKey::Backend),
            "library" => Ok(GroupKey::Library),
            "dataset" => Ok(GroupKey::Dataset),
            other => Err(ReportError::UnknownKey(other.to_owned())),
        }
    }
}

/// Parses a comma-separated key list, dropping duplicates.
pub fn parse_group_by(spec: &str) -> Result<Vec<GroupKey>, ReportError> {
    let mut keys = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let key: GroupKey = part.parse()?;
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    Ok(keys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    pub n_samples: u64,
    pub n_good: u64,
    pub n_bad: u64,
    pub n_irrelevant: u64,
    pub aup: Option<f64>,
    pub dur: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixMetricRow {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<String>,
    pub strategy: FixStrategy,
    pub n: u64,
    pub n_fixed: u64,
    pub n_not_fixed: u64,
    pub n_strategy_unsupported: u64,
    pub n_backend_error: u64,
    pub fr: Option<f64>,
    pub es: Option<f64>,
    pub em: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ReportRow {
    Metric(MetricRow),
    Fix(FixMetricRow),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn metric_row(
    backend: Option<String>,
    library: Option<String>,
    dataset: Option<Dataset>,
    labels: &[Label],
) -> MetricRow {
    let n = |l: Label| labels.iter().filter(|x| **x == l).count() as u64;
    MetricRow {
        backend,
        library,
        dataset,
        n_samples: labels.len() as u64,
        n_good: n(Label::Good),
        n_bad: n(Label::Bad),
        n_irrelevant: n(Label::Irrelevant),
        aup: aup(labels).ok().map(Ratio::rounded3),
        dur: dur(labels).ok().map(Ratio::rounded3),
    }
}

fn fix_row(backend: String, library: Option<String>, strategy: FixStrategy, outcomes: &[&FixOutcome]) -> FixMetricRow {
    let statuses: Vec<FixStatus> = outcomes.iter().map(|o| o.status).collect();
    let n = |s: FixStatus| statuses.iter().filter(|x| **x == s).count() as u64;
    let attempted: Vec<&&FixOutcome> = outcomes.iter().filter(|o| o.status.attempted()).collect();
    let (es, em) = if attempted.is_empty() {
        (None, None)
    } else {
        let total: f64 = attempted
            .iter()
            .map(|o| edit_similarity(&o.fixed_completion, &o.ground_truth_line))
            .sum();
        let matches = attempted
            .iter()
            .filter(|o| exact_match(&o.fixed_completion, &o.ground_truth_line))
            .count() as u64;
        let em = Ratio {
            num: matches,
            den: attempted.len() as u64,
        };
        (Some(round3(total / attempted.len() as f64)), Some(em.rounded3()))
    };
    FixMetricRow {
        backend,
        library,
        strategy,
        n: outcomes.len() as u64,
        n_fixed: n(FixStatus::Fixed),
        n_not_fixed: n(FixStatus::NotFixed),
        n_strategy_unsupported: n(FixStatus::StrategyUnsupported),
        n_backend_error: n(FixStatus::BackendError),
        fr: fixed_rate(&statuses).ok().map(Ratio::rounded3),
        es,
        em,
    }
}

/// Metric rows grouped by `group_by`, followed by fix rows grouped by
/// backend, strategy and (when requested) library. Grouping by dataset
/// yields an O, a U and an All row per group.
pub fn build_report(annotated: &[AnnotatedRecord], fixed: &[FixOutcome], group_by: &[GroupKey]) -> Report {
    let by_backend = group_by.contains(&GroupKey::Backend);
    let by_library = group_by.contains(&GroupKey::Library);
    let by_dataset = group_by.contains(&GroupKey::Dataset);

    let mut groups: BTreeMap<(Option<String>, Option<String>), Vec<&AnnotatedRecord>> = BTreeMap::new();
    for r in annotated {
        let key = (
            by_backend.then(|| r.completion.backend.clone()),
            by_library.then(|| r.sample().library.clone()),
        );
        groups.entry(key).or_default().push(r);
    }

    let mut rows = Vec::new();
    for ((backend, library), recs) in groups {
        if by_dataset {
            for ds in [Dataset::O, Dataset::U, Dataset::All] {
                let labels: Vec<Label> = recs
                    .iter()
                    .filter(|r| ds == Dataset::All || r.sample().dataset() == ds)
                    .map(|r| r.label)
                    .collect();
                rows.push(ReportRow::Metric(metric_row(backend.clone(), library.clone(), Some(ds), &labels)));
            }
        } else {
            let labels: Vec<Label> = recs.iter().map(|r| r.label).collect();
            rows.push(ReportRow::Metric(metric_row(backend, library, None, &labels)));
        }
    }

    let mut fix_groups: BTreeMap<(String, FixStrategy, Option<String>), Vec<&FixOutcome>> = BTreeMap::new();
    for o in fixed {
        let key = (o.backend.clone(), o.strategy, by_library.then(|| o.library.clone()));
        fix_groups.entry(key).or_default().push(o);
    }
    for ((backend, strategy, library), outcomes) in fix_groups {
        rows.push(ReportRow::Fix(fix_row(backend, library, strategy, &outcomes)));
    }
    Report { rows }
}

impl Report {
    pub fn metric_rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter_map(|r| match r {
            ReportRow::Metric(m) => Some(m),
            ReportRow::Fix(_) => None,
        })
    }

    pub fn fix_rows(&self) -> impl Iterator<Item = &FixMetricRow> {
        self.rows.iter().filter_map(|r| match r {
            ReportRow::Fix(f) => Some(f),
            ReportRow::Metric(_) => None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(csv_record(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub const CSV_HEADER: [&str; 19] = [
    "type",
    "backend",
    "library",
    "dataset",
    "strategy",
    "n_samples",
    "n_good",
    "n_bad",
    "n_irrelevant",
    "aup",
    "dur",
    "n",
    "n_fixed",
    "n_not_fixed",
    "n_strategy_unsupported",
    "n_backend_error",
    "fr",
    "es",
    "em",
];

/// Placeholder for a metric whose denominator is zero.
pub const UNDEFINED: &str = "—";

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_owned(), |x| format!("{x:.3}"))
}

fn csv_record(row: &ReportRow) -> Vec<String> {
    let opt = |s: &Option<String>| s.clone().unwrap_or_default();
    match row {
        ReportRow::Metric(m) => vec![
            "metric".into(),
            opt(&m.backend),
            opt(&m.library),
            m.dataset.map(|d| d.to_string()).unwrap_or_default(),
            String::new(),
            m.n_samples.to_string(),
            m.n_good.to_string(),
            m.n_bad.to_string(),
            m.n_irrelevant.to_string(),
            metric(m.aup),
            metric(m.dur),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ],
        ReportRow::Fix(f) => vec![
            "fix".into(),
            f.backend.clone(),
            opt(&f.library),
            String::new(),
            f.strategy.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            f.n.to_string(),
            f.n_fixed.to_string(),
            f.n_not_fixed.to_string(),
            f.n_strategy_unsupported.to_string(),
            f.n_backend_error.to_string(),
            metric(f.fr),
            metric(f.es),
            metric(f.em),
        ],
    }
}
