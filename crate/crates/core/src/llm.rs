//! Chat-completion backends and transcript persistence.
//!
//! [`LlmClient`] wraps a [`Provider`] with retries and records every call
//! into a [`Transcript`]. Three providers ship with the crate: an
//! OpenAI-compatible HTTP client, a replay provider serving a recorded
//! transcript, and a scripted mock.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "TCGEN_API_KEY";
/// Fallback credential variable used by most OpenAI-compatible tools.
pub const API_KEY_FALLBACK_ENV: &str = "OPENAI_API_KEY";
/// Environment variable holding the endpoint base URL.
pub const BASE_URL_ENV: &str = "TCGEN_BASE_URL";
pub const BASE_URL_FALLBACK_ENV: &str = "OPENAI_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// SHA-256 of the canonical JSON encoding of `messages`.
pub fn request_hash(messages: &[Message]) -> String {
    let canonical = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_timeout: Duration,
    pub retry_limit: u32,
    /// First retry delay; doubles on each subsequent retry.
    pub retry_backoff: Duration,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            model_name: "gpt-4".into(),
            temperature: 0.0,
            max_tokens: 1000,
            request_timeout: Duration::from_secs(120),
            retry_limit: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidConfig("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("empty message sequence")]
    EmptyRequest,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("model refused: {0}")]
    Refusal(String),
    #[error("provider returned HTTP {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("transcript exhausted")]
    TranscriptExhausted,
    #[error("request drift at call {call}: transcript expects {expected}, got {actual}")]
    RequestDrift {
        call: usize,
        expected: String,
        actual: String,
    },
    #[error("mock script has no response for this request")]
    ScriptExhausted,
    #[error("invalid completion config: {0}")]
    InvalidConfig(String),
}

impl LlmError {
    /// Timeouts, connection failures, 5xx and rate limits.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport { .. } => true,
            LlmError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Errors that would fail every subsequent request the same way.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            LlmError::Transport { .. }
                | LlmError::Auth(_)
                | LlmError::Provider { .. }
                | LlmError::InvalidConfig(_)
                | LlmError::RequestDrift { .. }
        )
    }
}

/// A chat-completion backend. Implementations perform one attempt; retries
/// live in [`LlmClient`].
pub trait Provider: Send + Sync {
    fn name(&self) -> &'static str;
    fn send(&self, messages: &[Message], config: &CompletionConfig) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: Vec<Message>,
    pub request_hash: String,
    pub response: String,
    pub wall_time_ms: u64,
    pub provider: String,
}

/// Append-only log of completion calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot access transcript {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt transcript at line {line}, byte offset {offset}: {reason}")]
    Corrupt { line: usize, offset: usize, reason: String },
}

/// Writes one JSON record per line.
pub fn save_transcript(transcript: &Transcript, path: &Path) -> Result<(), TranscriptError> {
    let io_err = |source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    for entry in &transcript.entries {
        serde_json::to_writer(&mut buf, entry).expect("entries serialize");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    file.sync_all().map_err(io_err)
}

pub fn load_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let text = fs::read(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut transcript = Transcript::new();
    let mut offset = 0usize;
    for (idx, raw) in text.split_inclusive(|b| *b == b'\n').enumerate() {
        let line_start = offset;
        offset += raw.len();
        let body = raw.strip_suffix(b"\n").unwrap_or(raw);
        if body.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<TranscriptEntry>(body) {
            Ok(entry) => transcript.push(entry),
            Err(e) => {
                let column_offset = if e.column() > 0 { e.column() - 1 } else { 0 };
                return Err(TranscriptError::Corrupt {
                    line: idx + 1,
                    offset: line_start + column_offset.min(body.len()),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(transcript)
}

/// Provider wrapper with retries and transcript recording.
pub struct LlmClient {
    provider: Box<dyn Provider>,
    config: CompletionConfig,
    transcript: Mutex<Transcript>,
}

impl LlmClient {
    pub fn new(provider: Box<dyn Provider>, config: CompletionConfig) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(LlmClient {
            provider,
            config,
            transcript: Mutex::new(Transcript::new()),
        })
    }

    pub fn config(&self) -> &CompletionConfig {
        &self.config
    }

    pub fn provider_name(&self) -> &'static str {
        self.provider.name()
    }

    pub fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let started = Instant::now();
        let mut attempt = 0u32;
        let response = loop {
            attempt += 1;
            match self.provider.send(messages, &self.config) {
                Ok(text) => break text,
                Err(e) if e.is_transient() && attempt <= self.config.retry_limit => {
                    let delay = self.config.retry_backoff * 2u32.saturating_pow(attempt - 1);
                    log::warn!("transient provider error (attempt {attempt}): {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        };
        self.transcript.lock().expect("transcript lock").push(TranscriptEntry {
            request: messages.to_vec(),
            request_hash: request_hash(messages),
            response: response.clone(),
            wall_time_ms: started.elapsed().as_millis() as u64,
            provider: self.provider.name().to_string(),
        });
        Ok(response)
    }

    /// Snapshot of every call recorded so far.
    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Reads the endpoint and credential from the environment.
    pub fn from_env() -> Self {
        let var = |primary: &str, fallback: &str| {
            std::env::var(primary)
                .ok()
                .or_else(|| std::env::var(fallback).ok())
                .filter(|v| !v.trim().is_empty())
        };
        let base = var(BASE_URL_ENV, BASE_URL_FALLBACK_ENV).unwrap_or_else(|| DEFAULT_BASE_URL.into());
        HttpProvider::new(base, var(API_KEY_ENV, API_KEY_FALLBACK_ENV))
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &'static str {
        "http"
    }

    fn send(&self, messages: &[Message], config: &CompletionConfig) -> Result<String, LlmError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| LlmError::Auth(format!("no credential set in {API_KEY_ENV} or {API_KEY_FALLBACK_ENV}")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = json!({
            "model": config.model_name,
            "messages": messages,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut response = agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| LlmError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| LlmError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        match status {
            200..=299 => parse_chat_response(&text),
            401 | 403 => Err(LlmError::Auth(error_message(&text))),
            _ => Err(LlmError::Provider {
                status,
                message: error_message(&text),
            }),
        }
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect())
}

fn parse_chat_response(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = &value["choices"][0];
    let message = &choice["message"];
    if let Some(refusal) = message["refusal"].as_str() {
        return Err(LlmError::Refusal(refusal.to_string()));
    }
    if choice["finish_reason"].as_str() == Some("content_filter") {
        return Err(LlmError::Refusal("response withheld by content filter".into()));
    }
    message["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::Malformed("no message content in first choice".into()))
}

/// Serves responses from a recorded transcript.
///
/// Each request must hash-match an unconsumed entry; requests are matched
/// to the earliest such entry so transcripts recorded with concurrent
/// problems still replay.
pub struct ReplayProvider {
    entries: Vec<TranscriptEntry>,
    consumed: Mutex<Vec<bool>>,
}

impl ReplayProvider {
    pub fn new(transcript: Transcript) -> Self {
        let n = transcript.entries.len();
        ReplayProvider {
            entries: transcript.entries,
            consumed: Mutex::new(vec![false; n]),
        }
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn send(&self, messages: &[Message], _config: &CompletionConfig) -> Result<String, LlmError> {
        let hash = request_hash(messages);
        let mut consumed = self.consumed.lock().expect("replay lock");
        let next = consumed.iter().position(|c| !*c).ok_or(LlmError::TranscriptExhausted)?;
        let hit = (next..self.entries.len())
            .find(|&i| !consumed[i] && self.entries[i].request_hash == hash)
            .ok_or_else(|| LlmError::RequestDrift {
                call: next,
                expected: self.entries[next].request_hash.clone(),
                actual: hash,
            })?;
        consumed[hit] = true;
        Ok(self.entries[hit].response.clone())
    }
}

type Responder = dyn Fn(&[Message]) -> Option<String> + Send + Sync;

/// Deterministic mock provider.
pub struct ScriptedProvider {
    responder: Arc<Responder>,
}

/// One rule of a mock script file.
///
/// A rule applies when `when` occurs in the last message and `within`
/// occurs somewhere in the conversation; absent fields always match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub when: Option<String>,
    #[serde(default)]
    pub within: Option<String>,
    pub response: String,
}

impl ScriptedProvider {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&[Message]) -> Option<String> + Send + Sync + 'static,
    {
        ScriptedProvider { responder: Arc::new(f) }
    }

    /// Always answers `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_| Some(text.clone()))
    }

    /// Answers `responses` in order, then fails.
    pub fn sequence(responses: Vec<String>) -> Self {
        let next = Mutex::new(0usize);
        Self::from_fn(move |_| {
            let mut i = next.lock().expect("sequence lock");
            let out = responses.get(*i).cloned();
            *i += 1;
            out
        })
    }

    /// First matching rule wins.
    pub fn from_rules(rules: Vec<ScriptRule>) -> Self {
        Self::from_fn(move |messages| {
            let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
            rules
                .iter()
                .find(|rule| {
                    rule.when.as_deref().is_none_or(|w| last.contains(w))
                        && rule
                            .within
                            .as_deref()
                            .is_none_or(|w| messages.iter().any(|m| m.content.contains(w)))
                })
                .map(|rule| rule.response.clone())
        })
    }

    /// Loads rules from a JSON Lines file.
    pub fn load_rules(path: &Path) -> Result<Vec<ScriptRule>, TranscriptError> {
        let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut rules = Vec::new();
        let mut offset = 0;
        for (idx, line) in text.split_inclusive('\n').enumerate() {
            let start = offset;
            offset += line.len();
            if line.trim().is_empty() {
                continue;
            }
            let rule = serde_json::from_str(line.trim_end()).map_err(|e| TranscriptError::Corrupt {
                line: idx + 1,
                offset: start + e.column().saturating_sub(1),
                reason: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(rules)
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn send(&self, messages: &[Message], _config: &CompletionConfig) -> Result<String, LlmError> {
        (self.responder)(messages).ok_or(LlmError::ScriptExhausted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn quick_config() -> CompletionConfig {
        CompletionConfig {
            retry_backoff: Duration::from_millis(1),
            request_timeout: Duration::from_secs(5),
            ..CompletionConfig::default()
        }
    }

    fn convo() -> Vec<Message> {
        vec![Message::system("sys"), Message::user("make tests")]
    }

    #[test]
    fn defaults_match_reported_setup() {
        let c = CompletionConfig::default();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_tokens, 1000);
    }

    #[test]
    fn mock_echoes_canned_response() {
        let client = LlmClient::new(Box::new(ScriptedProvider::fixed("R")), quick_config()).unwrap();
        assert_eq!(client.complete(&convo()).unwrap(), "R");
        let t = client.transcript();
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries()[0].provider, "mock");
        assert_eq!(t.entries()[0].request_hash, request_hash(&convo()));
    }

    #[test]
    fn empty_request_is_rejected() {
        let client = LlmClient::new(Box::new(ScriptedProvider::fixed("R")), quick_config()).unwrap();
        assert_eq!(client.complete(&[]), Err(LlmError::EmptyRequest));
    }

    #[test]
    fn negative_temperature_is_invalid() {
        let cfg = CompletionConfig {
            temperature: -0.1,
            ..quick_config()
        };
        assert!(LlmClient::new(Box::new(ScriptedProvider::fixed("R")), cfg).is_err());
    }

    #[test]
    fn replay_serves_in_order_and_then_exhausts() {
        let recorder = LlmClient::new(
            Box::new(ScriptedProvider::sequence(vec!["a".into(), "b".into()])),
            quick_config(),
        )
        .unwrap();
        let first = convo();
        let mut second = convo();
        second.push(Message::assistant("a"));
        second.push(Message::user("again"));
        recorder.complete(&first).unwrap();
        recorder.complete(&second).unwrap();

        let replay = LlmClient::new(Box::new(ReplayProvider::new(recorder.transcript())), quick_config()).unwrap();
        assert_eq!(replay.complete(&first).unwrap(), "a");
        assert_eq!(replay.complete(&second).unwrap(), "b");
        assert_eq!(replay.complete(&first), Err(LlmError::TranscriptExhausted));
    }

    #[test]
    fn replay_detects_drift() {
        let recorder = LlmClient::new(Box::new(ScriptedProvider::fixed("a")), quick_config()).unwrap();
        recorder.complete(&convo()).unwrap();
        let replay = ReplayProvider::new(recorder.transcript());
        let err = replay
            .send(&[Message::user("something else")], &quick_config())
            .unwrap_err();
        assert!(matches!(err, LlmError::RequestDrift { call: 0, .. }));
    }

    #[test]
    fn rules_match_on_last_message_and_conversation() {
        let provider = ScriptedProvider::from_rules(vec![
            ScriptRule {
                when: Some("executed".into()),
                within: Some("sum67".into()),
                response: "revised".into(),
            },
            ScriptRule {
                when: None,
                within: Some("sum67".into()),
                response: "initial".into(),
            },
        ]);
        let cfg = quick_config();
        let first = vec![Message::user("write tests for sum67")];
        assert_eq!(provider.send(&first, &cfg).unwrap(), "initial");
        let mut second = first.clone();
        second.push(Message::user("tests were executed"));
        assert_eq!(provider.send(&second, &cfg).unwrap(), "revised");
        assert_eq!(
            provider.send(&[Message::user("other")], &cfg),
            Err(LlmError::ScriptExhausted)
        );
    }

    #[test]
    fn transcript_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let client = LlmClient::new(
            Box::new(ScriptedProvider::sequence(vec!["x\ny".into(), "{\"q\": 1}".into()])),
            quick_config(),
        )
        .unwrap();
        client.complete(&convo()).unwrap();
        client.complete(&[Message::user("ünïcode")]).unwrap();
        let t = client.transcript();
        save_transcript(&t, &path).unwrap();
        assert_eq!(load_transcript(&path).unwrap(), t);

        let empty = dir.path().join("empty.jsonl");
        save_transcript(&Transcript::new(), &empty).unwrap();
        assert!(load_transcript(&empty).unwrap().is_empty());
    }

    #[test]
    fn truncated_transcript_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let client = LlmClient::new(Box::new(ScriptedProvider::fixed("resp")), quick_config()).unwrap();
        client.complete(&convo()).unwrap();
        client.complete(&convo()).unwrap();
        save_transcript(&client.transcript(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let first_len = bytes.iter().position(|b| *b == b'\n').unwrap() + 1;
        // Cut the second record in half.
        let cut = first_len + (bytes.len() - first_len) / 2;
        fs::write(&path, &bytes[..cut]).unwrap();
        match load_transcript(&path) {
            Err(TranscriptError::Corrupt { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert!(
                    offset >= first_len && offset <= cut,
                    "offset {offset} not in [{first_len}, {cut}]"
                );
            }
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    /// Minimal one-shot HTTP server answering each connection with the
    /// next canned `(status, body)`.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        let handle = thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut body_buf = vec![0; content_length];
                reader.read_exact(&mut body_buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits, handle)
    }

    #[test]
    fn http_success_parses_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}]}"#;
        let (url, hits, handle) = serve(vec![(200, body.into())]);
        let client = LlmClient::new(Box::new(HttpProvider::new(url, Some("k".into()))), quick_config()).unwrap();
        assert_eq!(client.complete(&convo()).unwrap(), "hello");
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_auth_failure_is_not_retried() {
        let body = r#"{"error":{"message":"Incorrect API key provided"}}"#;
        let (url, hits, handle) = serve(vec![(401, body.into())]);
        let client = LlmClient::new(Box::new(HttpProvider::new(url, Some("bad".into()))), quick_config()).unwrap();
        let err = client.complete(&convo()).unwrap_err();
        assert_eq!(err, LlmError::Auth("Incorrect API key provided".into()));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_server_errors_are_retried() {
        let ok = r#"{"choices":[{"message":{"content":"fine"}}]}"#;
        let (url, hits, handle) = serve(vec![(503, "busy".into()), (429, "slow down".into()), (200, ok.into())]);
        let client = LlmClient::new(Box::new(HttpProvider::new(url, Some("k".into()))), quick_config()).unwrap();
        assert_eq!(client.complete(&convo()).unwrap(), "fine");
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn http_refusal_is_surfaced_verbatim() {
        let body = r#"{"choices":[{"message":{"content":null,"refusal":"I can't help with that."}}]}"#;
        let (url, _, handle) = serve(vec![(200, body.into())]);
        let client = LlmClient::new(Box::new(HttpProvider::new(url, Some("k".into()))), quick_config()).unwrap();
        assert_eq!(
            client.complete(&convo()).unwrap_err(),
            LlmError::Refusal("I can't help with that.".into())
        );
        handle.join().unwrap();
    }

    #[test]
    fn missing_credential_fails_before_any_request() {
        let client = LlmClient::new(Box::new(HttpProvider::new("http://127.0.0.1:9", None)), quick_config()).unwrap();
        assert!(matches!(client.complete(&convo()), Err(LlmError::Auth(_))));
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error_after_retries() {
        // Bind then drop to get a port with nothing listening.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let cfg = CompletionConfig {
            retry_limit: 2,
            ..quick_config()
        };
        let client = LlmClient::new(
            Box::new(HttpProvider::new(
                format!("http://127.0.0.1:{port}/v1"),
                Some("k".into()),
            )),
            cfg,
        )
        .unwrap();
        match client.complete(&convo()) {
            Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
