//! API mappings from deprecated to replacement fully-qualified names.
//!
//! A mapping file is a JSON array of objects:
//!
//! ```json
//! [{"library": "torch", "deprecated": "torch.lstsq",
//!   "replacements": ["torch.linalg.lstsq"], "version": "1.9.0"}]
//! ```
//!
//! One-to-many entries are split into one-to-one [`ApiMapping`]s in file order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FqnError {
    #[error("empty name")]
    Empty,
    #[error("invalid identifier segment `{segment}` in `{name}`")]
    InvalidSegment { name: String, segment: String },
}

/// A dotted fully-qualified name such as `torch.linalg.lstsq`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fqn {
    segments: Vec<String>,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_alphanumeric())
}

impl Fqn {
    pub fn parse(name: &str) -> Result<Self, FqnError> {
        if name.is_empty() {
            return Err(FqnError::Empty);
        }
        let segments: Vec<String> = name.split('.').map(str::to_owned).collect();
        if let Some(bad) = segments.iter().find(|s| !is_identifier(s)) {
            return Err(FqnError::InvalidSegment {
                name: name.to_owned(),
                segment: bad.clone(),
            });
        }
        Ok(Self { segments })
    }

    /// Builds a name from segments that are already known to be identifiers.
    pub fn from_segments<I, S>(segments: I) -> Result<Self, FqnError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() {
            return Err(FqnError::Empty);
        }
        if let Some(bad) = segments.iter().find(|s| !is_identifier(s)) {
            return Err(FqnError::InvalidSegment {
                name: segments.join("."),
                segment: bad.clone(),
            });
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn root(&self) -> &str {
        &self.segments[0]
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when `prefix`'s segments are a leading run of this name's segments.
    pub fn starts_with(&self, prefix: &Fqn) -> bool {
        self.segments.starts_with(&prefix.segments)
    }

    /// Appends trailing segments.
    pub fn join<S: AsRef<str>>(&self, rest: &[S]) -> Fqn {
        let mut segments = self.segments.clone();
        segments.extend(rest.iter().map(|s| s.as_ref().to_owned()));
        Fqn { segments }
    }

    pub fn dotted(&self) -> String {
        self.segments.join(".")
    }
}

impl fmt::Display for Fqn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dotted())
    }
}

impl fmt::Debug for Fqn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fqn({})", self.dotted())
    }
}

impl FromStr for Fqn {
    type Err = FqnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fqn::parse(s)
    }
}

impl Serialize for Fqn {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.dotted())
    }
}

impl<'de> Deserialize<'de> for Fqn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Fqn::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One deprecated API and one of its replacements.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiMapping {
    pub library: String,
    pub deprecated: Fqn,
    pub replacement: Fqn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprecated_in_version: Option<String>,
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("cannot read mapping file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mapping JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("mapping entry #{entry}: {field} `{value}` is not a valid name ({reason})")]
    InvalidName {
        entry: usize,
        field: &'static str,
        value: String,
        reason: FqnError,
    },
    #[error("mapping entry #{entry} ({deprecated}): empty replacements array")]
    EmptyReplacements { entry: usize, deprecated: String },
    #[error("mapping entry #{entry}: empty library name")]
    EmptyLibrary { entry: usize },
    #[error("mapping entry #{entry}: {deprecated} maps to itself")]
    SelfMapping { entry: usize, deprecated: String },
    #[error("mapping entry #{entry}: duplicate mapping {deprecated} -> {replacement}")]
    Duplicate {
        entry: usize,
        deprecated: String,
        replacement: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    library: String,
    deprecated: String,
    replacements: Vec<String>,
    #[serde(default)]
    version: Option<String>,
}

#[derive(Serialize)]
struct RawEntryOut<'a> {
    library: &'a str,
    deprecated: String,
    replacements: [String; 1],
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<&'a str>,
}

/// Non-fatal observations made while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingWarning {
    pub entry: usize,
    pub message: String,
}

/// Ordered, immutable set of one-to-one mappings.
#[derive(Debug, Clone, Default)]
pub struct MappingSet {
    mappings: Vec<ApiMapping>,
    by_deprecated: HashMap<Fqn, Vec<usize>>,
    by_replacement: HashMap<Fqn, Vec<usize>>,
    warnings: Vec<MappingWarning>,
}

impl PartialEq for MappingSet {
    fn eq(&self, other: &Self) -> bool {
        self.mappings == other.mappings
    }
}

/// Reads and validates a mapping file.
pub fn load_mappings(path: impl AsRef<Path>) -> Result<MappingSet, MappingError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MappingSet::from_json_str(&text)
}

impl MappingSet {
    pub fn from_json_str(text: &str) -> Result<Self, MappingError> {
        let raw: Vec<RawEntry> = serde_json::from_str(text).map_err(|e| MappingError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut set = MappingSet::default();
        let mut seen = HashSet::new();
        for (entry, raw) in raw.into_iter().enumerate() {
            if raw.library.trim().is_empty() {
                return Err(MappingError::EmptyLibrary { entry });
            }
            let deprecated =
                Fqn::parse(&raw.deprecated).map_err(|reason| MappingError::InvalidName {
                    entry,
                    field: "deprecated",
                    value: raw.deprecated.clone(),
                    reason,
                })?;
            if raw.replacements.is_empty() {
                return Err(MappingError::EmptyReplacements {
                    entry,
                    deprecated: raw.deprecated,
                });
            }
            for rep in &raw.replacements {
                let replacement = Fqn::parse(rep).map_err(|reason| MappingError::InvalidName {
                    entry,
                    field: "replacements",
                    value: rep.clone(),
                    reason,
                })?;
                if replacement == deprecated {
                    return Err(MappingError::SelfMapping {
                        entry,
                        deprecated: raw.deprecated.clone(),
                    });
                }
                if !seen.insert((deprecated.clone(), replacement.clone())) {
                    return Err(MappingError::Duplicate {
                        entry,
                        deprecated: deprecated.dotted(),
                        replacement: replacement.dotted(),
                    });
                }
                let lib_root = raw.library.split('.').next().unwrap_or_default();
                if deprecated.root() != lib_root && replacement.root() != lib_root {
                    set.warnings.push(MappingWarning {
                        entry,
                        message: format!(
                            "library `{}` does not match the root of {} or {}",
                            raw.library, deprecated, replacement
                        ),
                    });
                }
                set.push(ApiMapping {
                    library: raw.library.clone(),
                    deprecated: deprecated.clone(),
                    replacement,
                    deprecated_in_version: raw.version.clone(),
                });
            }
        }
        Ok(set)
    }

    /// Builds a set from already-split mappings. Fails on the same
    /// conditions as the file loader.
    pub fn from_mappings(mappings: Vec<ApiMapping>) -> Result<Self, MappingError> {
        let mut set = MappingSet::default();
        let mut seen = HashSet::new();
        for (entry, m) in mappings.into_iter().enumerate() {
            if m.library.trim().is_empty() {
                return Err(MappingError::EmptyLibrary { entry });
            }
            if m.deprecated == m.replacement {
                return Err(MappingError::SelfMapping {
                    entry,
                    deprecated: m.deprecated.dotted(),
                });
            }
            if !seen.insert((m.deprecated.clone(), m.replacement.clone())) {
                return Err(MappingError::Duplicate {
                    entry,
                    deprecated: m.deprecated.dotted(),
                    replacement: m.replacement.dotted(),
                });
            }
            set.push(m);
        }
        Ok(set)
    }

    fn push(&mut self, m: ApiMapping) {
        let idx = self.mappings.len();
        self.by_deprecated
            .entry(m.deprecated.clone())
            .or_default()
            .push(idx);
        self.by_replacement
            .entry(m.replacement.clone())
            .or_default()
            .push(idx);
        self.mappings.push(m);
    }

    /// Serializes back to the file format, one replacement per object.
    pub fn to_json(&self) -> String {
        let out: Vec<RawEntryOut<'_>> = self
            .mappings
            .iter()
            .map(|m| RawEntryOut {
                library: &m.library,
                deprecated: m.deprecated.dotted(),
                replacements: [m.replacement.dotted()],
                version: m.deprecated_in_version.as_deref(),
            })
            .collect();
        serde_json::to_string_pretty(&out).expect("mapping serialization")
    }

    pub fn len(&self) -> usize {
        self.mappings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mappings.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ApiMapping> {
        self.mappings.iter()
    }

    pub fn get(&self, idx: usize) -> Option<&ApiMapping> {
        self.mappings.get(idx)
    }

    pub fn warnings(&self) -> &[MappingWarning] {
        &self.warnings
    }

    /// First mapping in file order whose deprecated name equals `fqn`.
    pub fn find_by_deprecated(&self, fqn: &Fqn) -> Option<&ApiMapping> {
        self.by_deprecated
            .get(fqn)
            .and_then(|ids| ids.first())
            .map(|&i| &self.mappings[i])
    }

    pub fn find_by_replacement(&self, fqn: &Fqn) -> Option<&ApiMapping> {
        self.by_replacement
            .get(fqn)
            .and_then(|ids| ids.first())
            .map(|&i| &self.mappings[i])
    }

    /// First mapping in file order that mentions `fqn` on either side.
    pub fn find_any(&self, fqn: &Fqn) -> Option<(usize, &ApiMapping)> {
        let d = self.by_deprecated.get(fqn).and_then(|v| v.first());
        let r = self.by_replacement.get(fqn).and_then(|v| v.first());
        let idx = match (d, r) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) | (None, Some(&a)) => a,
            (None, None) => return None,
        };
        Some((idx, &self.mappings[idx]))
    }

    pub fn mentions(&self, fqn: &Fqn) -> bool {
        self.by_deprecated.contains_key(fqn) || self.by_replacement.contains_key(fqn)
    }

    /// Distinct library names in first-seen order.
    pub fn libraries(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.mappings
            .iter()
            .filter(|m| seen.insert(m.library.as_str()))
            .map(|m| m.library.as_str())
            .collect()
    }
}

impl<'a> IntoIterator for &'a MappingSet {
    type Item = &'a ApiMapping;
    type IntoIter = std::slice::Iter<'a, ApiMapping>;
    fn into_iter(self) -> Self::IntoIter {
        self.mappings.iter()
    }
}
