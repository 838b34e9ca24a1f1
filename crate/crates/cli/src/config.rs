//! Run configuration file. Every field is optional; command-line flags take
//! precedence. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use depfix_core::fix::FixStrategy;
use depfix_core::syntax::PythonVersion;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub functions: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub completions: Option<PathBuf>,
    pub annotated: Option<PathBuf>,
    pub fixed: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mappings: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub backends: Option<PathBuf>,
    pub backend: Option<String>,
    pub strategy: Option<FixStrategy>,
    pub concurrency: Option<usize>,
    pub max_new_tokens: Option<u32>,
    pub python: Option<PythonVersion>,
    pub extensions: Option<Vec<String>>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::Usage)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::Usage)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut() {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        anchor(&mut cfg.mappings);
        anchor(&mut cfg.corpus);
        anchor(&mut cfg.backends);
        let o = &mut cfg.outputs;
        for p in [
            &mut o.functions,
            &mut o.prompts,
            &mut o.completions,
            &mut o.annotated,
            &mut o.fixed,
            &mut o.report,
        ] {
            anchor(p);
        }
        Ok(cfg)
    }
}

/// The flag value, else the config value, else a usage error.
pub fn pick<T: Clone>(flag: Option<T>, cfg: &Option<T>, flag_name: &str, key: &str) -> Result<T, CliError> {
    flag.or_else(|| cfg.clone()).ok_or_else(|| {
        CliError::Usage(anyhow::anyhow!(
            "missing --{flag_name} (or `{key}` in the config file)"
        ))
    })
}
