//! Uniform completion interface over model backends.
//!
//! Three backend kinds exist:
//!
//! * `http-raw`: prompt sent verbatim to a completions-style endpoint; supports
//!   continuation from a prefix.
//! * `http-instruct`: prompt wrapped in the instruction template and sent to a
//!   chat-style endpoint; no continuation.
//! * `scripted`: deterministic responses from a JSON script, for tests and
//!   fixtures.
//!
//! Decoding is greedy (temperature 0) with a server-side token budget.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptSample;

pub const INSTRUCTION_PREFIX: &str =
    "Complete and output the next line for the following Python function: ";

/// Environment variable holding the bearer token for HTTP backends.
pub const API_KEY_ENV: &str = "DEPFIX_API_KEY";

pub fn instruct_wrap(pmpt: &str) -> String {
    format!("{INSTRUCTION_PREFIX}{pmpt}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodingStrategy {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub max_new_tokens: u32,
    pub strategy: DecodingStrategy,
    pub temperature: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self::greedy(50)
    }
}

impl DecodingParams {
    pub fn greedy(max_new_tokens: u32) -> Self {
        Self {
            max_new_tokens,
            strategy: DecodingStrategy::Greedy,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if self.strategy == DecodingStrategy::Greedy && self.temperature != 0.0 {
            return Err(GatewayError::InvalidParams(
                "greedy decoding requires temperature 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpRaw,
    HttpInstruct,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_continuation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub capabilities: Capabilities,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
    #[error("backend `{backend}` does not support continuation")]
    StrategyUnsupported { backend: String },
    #[error("scripted backend has no response for {key}")]
    ScriptedMiss { key: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Failures of a reachable-or-not remote backend, as opposed to local
    /// configuration or capability problems.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { .. } | GatewayError::Http { .. } | GatewayError::BadResponse(_)
        )
    }
}

/// A generation request. `sample_id` and `tag` are only consulted by the
/// scripted backend.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a str,
    pub sample_id: Option<&'a str>,
    pub tag: Option<&'a str>,
}

impl<'a> GenerationRequest<'a> {
    pub fn new(prompt: &'a str) -> Self {
        Self {
            prompt,
            sample_id: None,
            tag: None,
        }
    }

    pub fn for_sample(prompt: &'a str, sample_id: &'a str) -> Self {
        Self {
            prompt,
            sample_id: Some(sample_id),
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: &'a str) -> Self {
        self.tag = Some(tag);
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationRequest<'a> {
    pub prompt: &'a str,
    pub prefix: &'a str,
    pub sample_id: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGeneration {
    pub text: String,
    /// The token budget ran out before the model stopped.
    pub truncated: bool,
}

pub trait CompletionBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError>;

    /// Generates text that continues `prompt ⊕ prefix`. Only called when the
    /// descriptor advertises continuation support.
    fn generate_continuation(
        &self,
        req: &ContinuationRequest<'_>,
        params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// First non-empty emitted line, without its line terminator.
    pub text: String,
    pub backend: String,
    pub params: DecodingParams,
    pub raw: String,
    pub truncated: bool,
}

fn is_fence(line: &str) -> bool {
    let t = line.trim();
    t.starts_with("```") && t[3..].chars().all(|c| c.is_ascii_alphanumeric())
}

/// First line with non-whitespace content, skipping markdown fence markers.
pub fn first_line(raw: &str) -> &str {
    raw.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .find(|l| !l.trim().is_empty() && !is_fence(l))
        .unwrap_or("")
}

pub fn complete(
    backend: &dyn CompletionBackend,
    req: &GenerationRequest<'_>,
    params: &DecodingParams,
) -> Result<Completion, GatewayError> {
    params.validate()?;
    let out = backend.generate(req, params)?;
    Ok(Completion {
        text: first_line(&out.text).to_owned(),
        backend: backend.descriptor().name.clone(),
        params: *params,
        raw: out.text,
        truncated: out.truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Continuation {
    /// Generated text up to the end of the current line.
    pub suffix: String,
    pub raw: String,
    pub truncated: bool,
}

pub fn continue_from(
    backend: &dyn CompletionBackend,
    req: &ContinuationRequest<'_>,
    params: &DecodingParams,
) -> Result<Continuation, GatewayError> {
    if !backend.descriptor().capabilities.supports_continuation {
        return Err(GatewayError::StrategyUnsupported {
            backend: backend.descriptor().name.clone(),
        });
    }
    params.validate()?;
    let out = backend.generate_continuation(req, params)?;
    let line = out.text.split('\n').next().unwrap_or("");
    Ok(Continuation {
        suffix: line.strip_suffix('\r').unwrap_or(line).to_owned(),
        raw: out.text.clone(),
        truncated: out.truncated,
    })
}

/// Key under which a scripted backend looks up an exact prompt.
pub fn prompt_key(prompt: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(prompt.as_bytes())))
}

/// Deterministic backend serving scripted text.
///
/// Completion lookup tries `sha256:<hex of prompt>`, then `<id>#<tag>` for
/// tagged requests or `<id>` for untagged ones. Continuation lookup tries
/// `sha256:<hex of prompt ⊕ prefix>`, then the exact prefix, then the prefix
/// with leading whitespace removed.
#[derive(Debug)]
pub struct ScriptedBackend {
    descriptor: BackendDescriptor,
    completions: HashMap<String, String>,
    continuations: HashMap<String, String>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StructuredScript {
    #[serde(default)]
    completions: HashMap<String, String>,
    #[serde(default)]
    continuations: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: name.into(),
                kind: BackendKind::Scripted,
                capabilities: Capabilities {
                    supports_continuation: true,
                },
                endpoint: None,
            },
            completions: HashMap::new(),
            continuations: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_completion(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.completions.insert(key.into(), text.into());
        self
    }

    pub fn with_continuation(mut self, prefix: impl Into<String>, suffix: impl Into<String>) -> Self {
        self.continuations.insert(prefix.into(), suffix.into());
        self
    }

    pub fn from_json_str(name: &str, text: &str) -> Result<Self, GatewayError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| GatewayError::Config(format!("malformed script: {e}")))?;
        let structured = value.as_object().is_some_and(|o| {
            !o.is_empty() && o.keys().all(|k| k == "completions" || k == "continuations")
        });
        let mut backend = Self::new(name);
        if structured {
            let s: StructuredScript = serde_json::from_value(value)
                .map_err(|e| GatewayError::Config(format!("malformed script: {e}")))?;
            backend.completions = s.completions;
            backend.continuations = s.continuations;
        } else {
            backend.completions = serde_json::from_value(value)
                .map_err(|e| GatewayError::Config(format!("malformed script: {e}")))?;
        }
        Ok(backend)
    }

    /// Number of generation calls served so far, hits and misses alike.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Loads a scripted backend named after the file stem.
pub fn load_scripted_backend(path: impl AsRef<Path>) -> Result<ScriptedBackend, GatewayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scripted".into());
    ScriptedBackend::from_json_str(&name, &text)
}

impl CompletionBackend for ScriptedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        _params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let by_id = req.sample_id.map(|id| match req.tag {
            Some(tag) => format!("{id}#{tag}"),
            None => id.to_owned(),
        });
        let hash = prompt_key(req.prompt);
        let text = self
            .completions
            .get(&hash)
            .or_else(|| by_id.as_ref().and_then(|k| self.completions.get(k)))
            .ok_or_else(|| GatewayError::ScriptedMiss {
                key: by_id.unwrap_or(hash),
            })?;
        Ok(RawGeneration {
            text: text.clone(),
            truncated: false,
        })
    }

    fn generate_continuation(
        &self,
        req: &ContinuationRequest<'_>,
        _params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = prompt_key(&format!("{}{}", req.prompt, req.prefix));
        let text = self
            .continuations
            .get(&hash)
            .or_else(|| self.continuations.get(req.prefix))
            .or_else(|| self.continuations.get(req.prefix.trim_start()))
            .ok_or_else(|| GatewayError::ScriptedMiss {
                key: format!("continuation of `{}`", req.prefix),
            })?;
        Ok(RawGeneration {
            text: text.clone(),
            truncated: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestStyle {
    /// `{"prompt": text}`
    Prompt,
    /// `{"messages": [{"role": "user", "content": text}]}`
    Messages,
}

/// Per-backend wire mapping. Unset fields take defaults for the kind:
/// `http-raw` posts `prompt` to `/completions` and reads `/choices/0/text`;
/// `http-instruct` posts `messages` to `/chat/completions` and reads
/// `/choices/0/message/content`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMap {
    pub endpoint: Option<String>,
    pub style: Option<RequestStyle>,
    pub model: Option<String>,
    pub temperature: Option<String>,
    pub max_tokens: Option<String>,
    pub prompt: Option<String>,
    pub messages: Option<String>,
    /// JSON pointer to the generated text.
    pub response_text: Option<String>,
    /// JSON pointer to the stop reason; `"length"` marks truncation.
    pub finish_reason: Option<String>,
    /// Static fields merged into every request body.
    #[serde(default)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub field_map: FieldMap,
    /// Script file for `scripted` backends, relative to the config file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub retry_base_ms: Option<u64>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Many(Vec<BackendConfig>),
    One(Box<BackendConfig>),
}

/// Reads a backend config file holding one object or an array of them.
pub fn load_backend_configs(path: impl AsRef<Path>) -> Result<Vec<BackendConfig>, GatewayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    Ok(match parsed {
        ConfigFile::Many(v) => v,
        ConfigFile::One(c) => vec![*c],
    })
}

/// Instantiates a backend. `base_dir` anchors relative script paths.
pub fn build_backend(
    cfg: &BackendConfig,
    base_dir: &Path,
) -> Result<Box<dyn CompletionBackend>, GatewayError> {
    match cfg.kind {
        BackendKind::Scripted => {
            let script = cfg.script.as_ref().ok_or_else(|| {
                GatewayError::Config(format!("scripted backend `{}` needs a script", cfg.name))
            })?;
            let path = base_dir.join(script);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                GatewayError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            Ok(Box::new(ScriptedBackend::from_json_str(&cfg.name, &text)?))
        }
        BackendKind::HttpRaw | BackendKind::HttpInstruct => {
            let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            Ok(Box::new(HttpBackend::new(cfg.clone(), api_key)?))
        }
    }
}

/// Backend speaking a completions or chat-completions style JSON protocol.
pub struct HttpBackend {
    descriptor: BackendDescriptor,
    config: BackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("descriptor", &self.descriptor)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        let base = config
            .base_url
            .as_deref()
            .ok_or_else(|| GatewayError::Config(format!("backend `{}` needs base_url", config.name)))?;
        let endpoint = format!("{}{}", base.trim_end_matches('/'), Self::endpoint_path(&config));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.unwrap_or(60)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            descriptor: BackendDescriptor {
                name: config.name.clone(),
                kind: config.kind,
                capabilities: Capabilities {
                    supports_continuation: config.kind == BackendKind::HttpRaw,
                },
                endpoint: Some(endpoint),
            },
            config,
            api_key,
            client,
        })
    }

    fn endpoint_path(config: &BackendConfig) -> String {
        match (&config.field_map.endpoint, config.kind) {
            (Some(e), _) => e.clone(),
            (None, BackendKind::HttpInstruct) => "/chat/completions".into(),
            (None, _) => "/completions".into(),
        }
    }

    fn style(&self) -> RequestStyle {
        self.config.field_map.style.unwrap_or(match self.config.kind {
            BackendKind::HttpInstruct => RequestStyle::Messages,
            _ => RequestStyle::Prompt,
        })
    }

    /// The JSON body sent for `text`. Instruction wrapping happens before
    /// this call.
    pub fn request_body(&self, text: &str, params: &DecodingParams) -> Value {
        let fm = &self.config.field_map;
        let mut body = fm.extra.clone();
        if let Some(model) = &self.config.model {
            body.insert(fm.model.clone().unwrap_or_else(|| "model".into()), json!(model));
        }
        body.insert(
            fm.temperature.clone().unwrap_or_else(|| "temperature".into()),
            json!(params.temperature),
        );
        body.insert(
            fm.max_tokens.clone().unwrap_or_else(|| "max_tokens".into()),
            json!(params.max_new_tokens),
        );
        match self.style() {
            RequestStyle::Prompt => {
                body.insert(fm.prompt.clone().unwrap_or_else(|| "prompt".into()), json!(text));
            }
            RequestStyle::Messages => {
                body.insert(
                    fm.messages.clone().unwrap_or_else(|| "messages".into()),
                    json!([{"role": "user", "content": text}]),
                );
            }
        }
        Value::Object(body)
    }

    /// Text actually sent as the prompt for a completion request.
    pub fn outgoing_prompt(&self, pmpt: &str) -> String {
        match self.config.kind {
            BackendKind::HttpInstruct => instruct_wrap(pmpt),
            _ => pmpt.to_owned(),
        }
    }

    fn extract(&self, value: &Value) -> Result<RawGeneration, GatewayError> {
        let fm = &self.config.field_map;
        let (text_ptr, finish_ptr) = match self.style() {
            RequestStyle::Messages => ("/choices/0/message/content", "/choices/0/finish_reason"),
            RequestStyle::Prompt => ("/choices/0/text", "/choices/0/finish_reason"),
        };
        let text_ptr = fm.response_text.as_deref().unwrap_or(text_ptr);
        let finish_ptr = fm.finish_reason.as_deref().unwrap_or(finish_ptr);
        let text = value
            .pointer(text_ptr)
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::BadResponse(format!("no string at {text_ptr}")))?;
        let truncated = value.pointer(finish_ptr).and_then(Value::as_str) == Some("length");
        Ok(RawGeneration {
            text: text.to_owned(),
            truncated,
        })
    }

    fn post(&self, body: &Value) -> Result<RawGeneration, GatewayError> {
        let url = self.descriptor.endpoint.as_deref().expect("set in new");
        let max_retries = self.config.max_retries.unwrap_or(3);
        let base_ms = self.config.retry_base_ms.unwrap_or(500);
        let mut last = String::new();
        for attempt in 0..=max_retries {
            if attempt > 0 {
                let delay = base_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        let value: Value = serde_json::from_str(&text)
                            .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                        return self.extract(&value);
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last = format!("HTTP {status}: {text}");
                        log::warn!("{}: attempt {} failed: {last}", self.descriptor.name, attempt + 1);
                        continue;
                    }
                    return Err(GatewayError::Http {
                        status: status.as_u16(),
                        body: text,
                    });
                }
                Err(e) => {
                    last = e.to_string();
                    log::warn!("{}: attempt {} failed: {last}", self.descriptor.name, attempt + 1);
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: max_retries + 1,
            message: last,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError> {
        let body = self.request_body(&self.outgoing_prompt(req.prompt), params);
        self.post(&body)
    }

    fn generate_continuation(
        &self,
        req: &ContinuationRequest<'_>,
        params: &DecodingParams,
    ) -> Result<RawGeneration, GatewayError> {
        if !self.descriptor.capabilities.supports_continuation {
            return Err(GatewayError::StrategyUnsupported {
                backend: self.descriptor.name.clone(),
            });
        }
        let text = format!("{}{}", req.prompt, req.prefix);
        self.post(&self.request_body(&text, params))
    }
}

/// Maps `f` over `items` on at most `concurrency` threads, keeping order.
pub fn run_bounded<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

/// One line of `completions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    #[serde(flatten)]
    pub sample: PromptSample,
    pub backend: String,
    pub completion: String,
    #[serde(default)]
    pub raw: String,
    #[serde(default)]
    pub truncated: bool,
    pub params: DecodingParams,
}

/// Completes one sample from its prompt alone.
pub fn complete_sample(
    backend: &dyn CompletionBackend,
    sample: &PromptSample,
    params: &DecodingParams,
) -> Result<CompletionRecord, GatewayError> {
    let pmpt = sample.prompt_text();
    let c = complete(backend, &GenerationRequest::for_sample(&pmpt, &sample.id), params)?;
    Ok(CompletionRecord {
        sample: sample.clone(),
        backend: c.backend,
        completion: c.text,
        raw: c.raw,
        truncated: c.truncated,
        params: *params,
    })
}
