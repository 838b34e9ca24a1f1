//! Plausibility, deprecated usage, fix rate, edit similarity and exact match.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::Node;

use crate::annotate::Label;
use crate::fix::FixStatus;
use crate::syntax::parse_tree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("{0} is undefined: empty denominator")]
    Undefined(&'static str),
}

/// An exact count ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    fn checked(name: &'static str, num: u64, den: u64) -> Result<Self, MetricError> {
        if den == 0 {
            Err(MetricError::Undefined(name))
        } else {
            Ok(Ratio { num, den })
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Value rounded half-up to three decimals from integer arithmetic.
    pub fn rounded3(self) -> f64 {
        let scaled = (self.num as u128 * 2000 + self.den as u128) / (2 * self.den as u128);
        scaled as f64 / 1000.0
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.rounded3())
    }
}

fn count(labels: &[Label], pred: impl Fn(Label) -> bool) -> u64 {
    labels.iter().filter(|l| pred(**l)).count() as u64
}

/// Share of plausible (good or bad) completions.
pub fn aup(labels: &[Label]) -> Result<Ratio, MetricError> {
    Ratio::checked("AUP", count(labels, Label::is_plausible), labels.len() as u64)
}

/// Share of plausible completions that are bad.
pub fn dur(labels: &[Label]) -> Result<Ratio, MetricError> {
    Ratio::checked(
        "DUR",
        count(labels, |l| l == Label::Bad),
        count(labels, Label::is_plausible),
    )
}

/// Share of attempted fixes that produced a good line. Unsupported and
/// failed attempts are left out of the denominator.
pub fn fixed_rate(statuses: &[FixStatus]) -> Result<Ratio, MetricError> {
    Ratio::checked(
        "FR",
        statuses.iter().filter(|s| **s == FixStatus::Fixed).count() as u64,
        statuses.iter().filter(|s| s.attempted()).count() as u64,
    )
}

/// `1 - lev(a, b) / max(|a|, |b|)` over characters of the stripped strings.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (a.trim(), b.trim());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    /// The line did not parse and was left as is.
    pub unparsable: bool,
}

fn collect_targets(node: Node<'_>, out: &mut Vec<(usize, usize)>) {
    match node.kind() {
        "pattern_list" | "tuple_pattern" | "list_pattern" | "expression_list" | "tuple" | "list" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                collect_targets(child, out);
            }
        }
        "list_splat_pattern" | "list_splat" => {
            if let Some(inner) = node.named_child(0) {
                collect_targets(inner, out);
            }
        }
        "parenthesized_expression" => {
            if let Some(inner) = node.named_child(0) {
                collect_targets(inner, out);
            }
        }
        "comment" => {}
        _ => out.push((node.start_byte(), node.end_byte())),
    }
}

/// Replaces every assignment target on the line with `_`, element-wise for
/// unpacking. Other lines come back unchanged.
pub fn normalize_return_values(line: &str) -> Normalized {
    let body = line.trim_start();
    let lead = &line[..line.len() - body.len()];
    let unchanged = |unparsable| Normalized {
        text: line.to_owned(),
        unparsable,
    };
    if body.trim().is_empty() {
        return unchanged(false);
    }
    let tree = parse_tree(body);
    let root = tree.root_node();
    if root.has_error() {
        return unchanged(true);
    }
    let Some(stmt) = root.named_child(0) else {
        return unchanged(false);
    };
    if stmt.kind() != "expression_statement" {
        return unchanged(false);
    }
    let mut targets = Vec::new();
    let mut node = stmt.named_child(0);
    while let Some(n) = node.filter(|n| n.kind() == "assignment") {
        if let Some(left) = n.child_by_field_name("left") {
            collect_targets(left, &mut targets);
        }
        node = n.child_by_field_name("right");
    }
    if targets.is_empty() {
        return unchanged(false);
    }
    let mut text = String::with_capacity(line.len());
    text.push_str(lead);
    let mut pos = 0;
    for (start, end) in targets {
        text.push_str(&body[pos..start]);
        text.push('_');
        pos = end;
    }
    text.push_str(&body[pos..]);
    Normalized {
        text,
        unparsable: false,
    }
}

/// Equality after return-value normalization and whitespace stripping.
pub fn exact_match(pred: &str, truth: &str) -> bool {
    normalize_return_values(pred).text.trim() == normalize_return_values(truth).text.trim()
}
