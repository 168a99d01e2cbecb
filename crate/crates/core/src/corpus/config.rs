use std::fmt;
use std::path::{Path, PathBuf};

use ini::{Ini, ParseOption};

use crate::intensity::IntensityParams;

/// Environment variable that overrides the configured API key.
pub const API_KEY_ENV: &str = "FIDELITY_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("missing required key `{key}` in [{section}]")]
    MissingRequiredKey {
        section: &'static str,
        key: &'static str,
    },
    #[error("malformed value for `{key}`: {value:?}")]
    MalformedValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Handle to the API credential. The secret itself is never printed.
#[derive(Clone, PartialEq, Eq, Default)]
pub enum SecretRef {
    #[default]
    Absent,
    Inline(String),
    /// `api_key = env:NAME` reads the key from `NAME`.
    Env(String),
}

impl SecretRef {
    fn from_value(v: &str) -> Self {
        match v.strip_prefix("env:") {
            Some(name) => SecretRef::Env(name.trim().to_string()),
            None if v.is_empty() => SecretRef::Absent,
            None => SecretRef::Inline(v.to_string()),
        }
    }

    /// Resolves the key; `FIDELITY_API_KEY` takes precedence when set.
    pub fn resolve(&self) -> Option<String> {
        if let Ok(k) = std::env::var(API_KEY_ENV) {
            if !k.is_empty() {
                return Some(k);
            }
        }
        match self {
            SecretRef::Absent => None,
            SecretRef::Inline(k) => Some(k.clone()),
            SecretRef::Env(name) => std::env::var(name).ok(),
        }
    }
}

impl fmt::Debug for SecretRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecretRef::Absent => f.write_str("Absent"),
            SecretRef::Inline(_) => f.write_str("Inline(***)"),
            SecretRef::Env(name) => write!(f, "Env({name})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model_id: String,
    pub temperature: f64,
    pub api_base: String,
    pub api_key_ref: SecretRef,
    pub embedding_model: String,
    pub max_attempts: u32,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub knowledge_base: PathBuf,
    pub intensity_params: IntensityParams,
    pub chunk_threshold: usize,
    pub chunk_overlap: usize,
    pub retrieval_k: usize,
    /// Additional type names for the pseudo-C lexicon.
    pub extra_types: Vec<String>,
    /// Keys present in the file that this version does not understand.
    pub unrecognized: Vec<String>,
}

impl PipelineConfig {
    pub const DEFAULT_MODEL: &'static str = "gpt-4o";
    pub const DEFAULT_EMBEDDING_MODEL: &'static str = "text-embedding-ada-002";
    pub const DEFAULT_API_BASE: &'static str = "https://api.openai.com/v1";

    /// Built-in defaults around a required knowledge base path.
    pub fn with_knowledge_base(knowledge_base: impl Into<PathBuf>) -> Self {
        Self {
            model_id: Self::DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            api_base: Self::DEFAULT_API_BASE.to_string(),
            api_key_ref: SecretRef::Absent,
            embedding_model: Self::DEFAULT_EMBEDDING_MODEL.to_string(),
            max_attempts: 3,
            concurrency: 4,
            timeout_secs: 120,
            input_dir: PathBuf::from("input"),
            output_dir: PathBuf::from("output"),
            knowledge_base: knowledge_base.into(),
            intensity_params: IntensityParams::default(),
            chunk_threshold: 50,
            chunk_overlap: 5,
            retrieval_k: 1,
            extra_types: Vec::new(),
            unrecognized: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.chunk_threshold == 0 || self.chunk_overlap >= self.chunk_threshold {
            return Err(ConfigError::Invalid(format!(
                "chunk_overlap ({}) must be smaller than chunk_threshold ({})",
                self.chunk_overlap, self.chunk_threshold
            )));
        }
        if self.retrieval_k == 0 {
            return Err(ConfigError::Invalid("retrieval_k must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        self.intensity_params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    // Relative paths in the file are relative to the file's directory.
    if let Some(base) = path.parent() {
        for p in [&mut cfg.input_dir, &mut cfg.output_dir, &mut cfg.knowledge_base] {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

const LLM_KEYS: &[&str] = &[
    "model",
    "temperature",
    "api_key",
    "api_base",
    "embedding_model",
    "max_attempts",
    "concurrency",
    "timeout_secs",
];
const PATH_KEYS: &[&str] = &["input_dir", "output_dir", "knowledge_base"];
const DETECTION_KEYS: &[&str] = &[
    "chunk_threshold",
    "chunk_overlap",
    "retrieval_k",
    "min_lines",
    "base_lines",
    "max_lines",
    "threshold",
    "step",
    "extra_types",
];

/// Parses `config.ini` text. Paths are returned as written.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let opts = ParseOption {
        enabled_quote: false,
        enabled_escape: false,
        ..ParseOption::default()
    };
    let ini = Ini::load_from_str_opt(text, opts).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let llm = ini
        .section(Some("LLM"))
        .ok_or(ConfigError::MissingSection("LLM"))?;
    let paths = ini
        .section(Some("PATHS"))
        .ok_or(ConfigError::MissingSection("PATHS"))?;
    let detection = ini.section(Some("DETECTION"));

    let get = |props: &ini::Properties, key: &str| -> Option<String> {
        props.get(key).map(|v| v.trim().to_string())
    };

    let knowledge_base = get(paths, "knowledge_base")
        .filter(|v| !v.is_empty())
        .ok_or(ConfigError::MissingRequiredKey {
            section: "PATHS",
            key: "knowledge_base",
        })?;
    let mut cfg = PipelineConfig::with_knowledge_base(knowledge_base);

    if let Some(v) = get(llm, "model") {
        cfg.model_id = v;
    }
    if let Some(v) = get(llm, "temperature") {
        cfg.temperature = number("temperature", &v)?;
    }
    if let Some(v) = get(llm, "api_key") {
        cfg.api_key_ref = SecretRef::from_value(&v);
    }
    if let Some(v) = get(llm, "api_base") {
        cfg.api_base = v;
    }
    if let Some(v) = get(llm, "embedding_model") {
        cfg.embedding_model = v;
    }
    if let Some(v) = get(llm, "max_attempts") {
        cfg.max_attempts = number("max_attempts", &v)?;
    }
    if let Some(v) = get(llm, "concurrency") {
        cfg.concurrency = number("concurrency", &v)?;
    }
    if let Some(v) = get(llm, "timeout_secs") {
        cfg.timeout_secs = number("timeout_secs", &v)?;
    }
    if let Some(v) = get(paths, "input_dir") {
        cfg.input_dir = PathBuf::from(v);
    }
    if let Some(v) = get(paths, "output_dir") {
        cfg.output_dir = PathBuf::from(v);
    }

    if let Some(det) = detection {
        let p = &mut cfg.intensity_params;
        for (key, slot) in [
            ("chunk_threshold", &mut cfg.chunk_threshold),
            ("chunk_overlap", &mut cfg.chunk_overlap),
            ("retrieval_k", &mut cfg.retrieval_k),
            ("min_lines", &mut p.min_lines),
            ("base_lines", &mut p.base_lines),
            ("max_lines", &mut p.max_lines),
            ("threshold", &mut p.threshold),
            ("step", &mut p.step),
        ] {
            if let Some(v) = get(det, key) {
                *slot = number(key, &v)?;
            }
        }
        if let Some(v) = get(det, "extra_types") {
            cfg.extra_types = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
    }

    for (section, props) in ini.iter() {
        let known: &[&str] = match section {
            Some("LLM") => LLM_KEYS,
            Some("PATHS") => PATH_KEYS,
            Some("DETECTION") => DETECTION_KEYS,
            _ => &[],
        };
        for (key, _) in props.iter() {
            if !known.contains(&key) {
                let full = format!("{}.{}", section.unwrap_or(""), key);
                log::warn!("unrecognized config key `{full}`");
                cfg.unrecognized.push(full);
            }
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::MalformedValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}
