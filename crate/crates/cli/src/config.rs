//! Flat key/value configuration, layered as
//! command-line flag > `TCGEN_<KEY>` environment variable > config file > default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tcgen_core::dataset::CorpusFormat;
use tcgen_core::llm::CompletionConfig;
use tcgen_core::prompts::FeedbackContext;
use tcgen_core::refine::PipelineConfig;

pub const ENV_PREFIX: &str = "TCGEN_";

macro_rules! keys {
    ($($field:ident : $help:literal),* $(,)?) => {
        /// Command-line mirrors of every config key.
        #[derive(Debug, Default, Clone, clap::Args)]
        pub struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE", help = $help)]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $( if let Some(v) = &self.$field { out.push((stringify!($field), v.clone())); } )*
                out
            }
        }

        /// Every recognised config key.
        pub const KEYS: &[&str] = &[$(stringify!($field)),*];
    };
}

keys! {
    corpus: "Corpus directory (table layout) or JSON Lines file",
    corpus_format: "auto, table or records",
    out: "Run directory",
    seed: "Seed for correct-code sampling",
    provider: "http, mock or replay",
    mock_script: "JSON Lines rules file for the mock provider",
    replay_transcript: "Transcript to replay",
    base_url: "Base URL of an OpenAI-compatible endpoint",
    model: "Model name",
    temperature: "Sampling temperature",
    max_tokens: "Completion token limit",
    request_timeout_ms: "Per-request timeout",
    retry_limit: "Retries for transient provider errors",
    k: "Feedback rounds per code pair",
    suite_size: "Tests requested per prompt (Q)",
    pair_count: "Code pairs per problem (1-3)",
    feedback_context: "full or fresh",
    timeout_ms: "Per-test wall-clock cap",
    parallel_problems: "Problems generated or evaluated concurrently",
    workers: "Concurrent test processes per submission",
    bins: "True-score bins in reports",
    q_max: "Largest Q tried by infer-q",
    problems: "Comma-separated problem ids to process (default: all)",
    templates_dir: "Directory overriding the bundled prompt templates",
    java: "java executable",
    javac: "javac executable (selects the javac back end)",
    janino_classpath: "Janino classpath (selects the Janino back end)",
    log_dir: "Keep per-run compile/run logs here",
}

const PATH_KEYS: &[&str] = &[
    "corpus",
    "out",
    "mock_script",
    "replay_transcript",
    "templates_dir",
    "java",
    "javac",
    "log_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
    Replay,
}

impl FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "http" | "openai" | "live" => Ok(ProviderKind::Http),
            "mock" | "scripted" => Ok(ProviderKind::Mock),
            "replay" => Ok(ProviderKind::Replay),
            other => Err(format!("unknown provider `{other}` (expected http, mock or replay)")),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Http => "http",
            ProviderKind::Mock => "mock",
            ProviderKind::Replay => "replay",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{key} = {value:?} ({layer}): {message}")]
    Invalid {
        key: String,
        value: String,
        layer: Layer,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    File,
    Env,
    Flag,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::File => "config file",
            Layer::Env => "environment",
            Layer::Flag => "command line",
        })
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub corpus_format: String,
    pub out: PathBuf,
    pub seed: u64,
    pub provider: ProviderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_transcript: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_timeout_ms: u64,
    pub retry_limit: u32,
    pub k: u32,
    pub suite_size: u32,
    pub pair_count: u32,
    pub feedback_context: FeedbackContext,
    pub timeout_ms: u64,
    pub parallel_problems: usize,
    pub workers: usize,
    pub bins: usize,
    pub q_max: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problems: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub java: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub javac: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub janino_classpath: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let completion = CompletionConfig::default();
        let pipeline = PipelineConfig::default();
        Settings {
            corpus: None,
            corpus_format: "auto".into(),
            out: PathBuf::from("runs/latest"),
            seed: pipeline.seed,
            provider: ProviderKind::Http,
            mock_script: None,
            replay_transcript: None,
            base_url: None,
            model: completion.model_name,
            temperature: completion.temperature,
            max_tokens: completion.max_tokens,
            request_timeout_ms: completion.request_timeout.as_millis() as u64,
            retry_limit: completion.retry_limit,
            k: pipeline.iterations,
            suite_size: pipeline.suite_size,
            pair_count: pipeline.pair_count,
            feedback_context: pipeline.feedback_context,
            timeout_ms: pipeline.per_test_cap.as_millis() as u64,
            parallel_problems: 1,
            workers: 4,
            bins: tcgen_core::metrics::DEFAULT_BIN_COUNT,
            q_max: 30,
            problems: None,
            templates_dir: None,
            java: None,
            javac: None,
            janino_classpath: None,
            log_dir: None,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| e.to_string())
}

fn positive<T: FromStr + PartialOrd + Default>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    let v: T = parse(value)?;
    if v <= T::default() {
        return Err("must be positive".into());
    }
    Ok(v)
}

impl Settings {
    /// Sets one key from its textual value. Relative paths are joined to
    /// `base` when given.
    pub fn apply(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), String> {
        let path = || -> PathBuf {
            let p = PathBuf::from(value.trim());
            match base {
                Some(b) if p.is_relative() && PATH_KEYS.contains(&key) => b.join(p),
                _ => p,
            }
        };
        let optional_string = || (!value.trim().is_empty()).then(|| value.trim().to_string());
        match key {
            "corpus" => self.corpus = Some(path()),
            "corpus_format" => {
                let v = value.trim().to_ascii_lowercase();
                if !["auto", "table", "records"].contains(&v.as_str()) {
                    return Err("expected auto, table or records".into());
                }
                self.corpus_format = v;
            }
            "out" => self.out = path(),
            "seed" => self.seed = parse(value)?,
            "provider" => self.provider = value.parse()?,
            "mock_script" => self.mock_script = Some(path()),
            "replay_transcript" => self.replay_transcript = Some(path()),
            "base_url" => self.base_url = optional_string(),
            "model" => self.model = value.trim().to_string(),
            "temperature" => {
                let t: f64 = parse(value)?;
                if !(t >= 0.0) {
                    return Err("must be nonnegative".into());
                }
                self.temperature = t;
            }
            "max_tokens" => self.max_tokens = positive(value)?,
            "request_timeout_ms" => self.request_timeout_ms = positive(value)?,
            "retry_limit" => self.retry_limit = parse(value)?,
            "k" => self.k = parse(value)?,
            "suite_size" => self.suite_size = positive(value)?,
            "pair_count" => {
                let n: u32 = positive(value)?;
                if n > tcgen_core::refine::MAX_PAIR_COUNT {
                    return Err(format!("at most {}", tcgen_core::refine::MAX_PAIR_COUNT));
                }
                self.pair_count = n;
            }
            "feedback_context" => {
                self.feedback_context = match value.trim().to_ascii_lowercase().as_str() {
                    "full" => FeedbackContext::Full,
                    "fresh" => FeedbackContext::Fresh,
                    _ => return Err("expected full or fresh".into()),
                }
            }
            "timeout_ms" => self.timeout_ms = positive(value)?,
            "parallel_problems" => self.parallel_problems = positive(value)?,
            "workers" => self.workers = positive(value)?,
            "bins" => self.bins = positive(value)?,
            "q_max" => self.q_max = positive(value)?,
            "problems" => self.problems = optional_string(),
            "templates_dir" => self.templates_dir = Some(path()),
            "java" => self.java = Some(path()),
            "javac" => self.javac = Some(path()),
            "janino_classpath" => self.janino_classpath = optional_string(),
            "log_dir" => self.log_dir = Some(path()),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Resolves settings from an optional config file, an environment
    /// lookup and command-line overrides.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: &[(&'static str, String)],
    ) -> Result<Settings, ConfigError> {
        let mut settings = Settings::default();
        if let Some(path) = file {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for (key, value) in read_file(path)? {
                settings
                    .apply(&key, &value, Some(&base))
                    .map_err(|message| invalid(&key, &value, Layer::File, message))?;
            }
        }
        for key in KEYS {
            if let Some(value) = env(&format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())) {
                settings
                    .apply(key, &value, None)
                    .map_err(|message| invalid(key, &value, Layer::Env, message))?;
            }
        }
        for (key, value) in flags {
            settings
                .apply(key, value, None)
                .map_err(|message| invalid(key, value, Layer::Flag, message))?;
        }
        Ok(settings)
    }

    pub fn completion(&self) -> CompletionConfig {
        CompletionConfig {
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            request_timeout: Duration::from_millis(self.request_timeout_ms),
            retry_limit: self.retry_limit,
            ..CompletionConfig::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            iterations: self.k,
            suite_size: self.suite_size,
            pair_count: self.pair_count,
            per_test_cap: self.per_test_cap(),
            seed: self.seed,
            feedback_context: self.feedback_context,
        }
    }

    pub fn per_test_cap(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn corpus_format(&self, path: &Path) -> CorpusFormat {
        match self.corpus_format.as_str() {
            "table" => CorpusFormat::Table,
            "records" => CorpusFormat::Records,
            _ => CorpusFormat::detect(path),
        }
    }

    pub fn problem_filter(&self) -> Option<Vec<String>> {
        self.problems.as_ref().map(|p| {
            p.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    /// TOML rendering used for run snapshots.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }
}

fn invalid(key: &str, value: &str, layer: Layer, message: String) -> ConfigError {
    if message.starts_with("unknown key") {
        return ConfigError::UnknownKey(key.to_string());
    }
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        layer,
        message,
    }
}

fn read_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (key, value) in table {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        let text = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: format!("`{key}` must be a plain value, found {}", other.type_str()),
                })
            }
        };
        out.insert(key, text);
    }
    Ok(out)
}
