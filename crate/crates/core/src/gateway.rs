//! Uniform access to chat-completion providers: retries with backoff,
//! bounded parallelism, a content-addressed on-disk cache, and a replay mode
//! that answers every request from the cache (deterministic, network-free).

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptkit::PromptPair;

/// Environment variable holding the bearer token for live calls.
pub const API_KEY_ENV: &str = "HYPOTHESIM_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed (set {API_KEY_ENV})")]
    AuthFailed,
    #[error("rate limited after retries")]
    RateLimited,
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("provider error {status}: {message}")]
    ProviderError { status: u16, message: String },
    #[error("fixture missing in replay mode for key {key}")]
    FixtureMissing { key: String },
    #[error("cache entry corrupt: {path}; {detail}")]
    CacheCorrupt { path: PathBuf, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Result<Self, GatewayError> {
        let req = ChatRequest { model: model.into(), messages, temperature: 0.0, max_tokens: None };
        req.validate()?;
        Ok(req)
    }

    /// Request carrying a rendered prompt pair at the given temperature.
    pub fn from_pair(model: impl Into<String>, pair: &PromptPair, temperature: f64) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![Message::system(&pair.system), Message::user(&pair.user)],
            temperature,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest("first message must be system or user".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_echo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ChatResponse { content: content.into(), model_echo: None, usage: None }
    }
}

/// One cached exchange, stored as a JSON file named by the request digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub created_at: u64,
}

// ---------------------------------------------------------------------------
// Canonicalization and keys
// ---------------------------------------------------------------------------

fn normalize_newlines(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::String(s) => {
            if s.contains('\r') {
                *s = s.replace("\r\n", "\n").replace('\r', "\n");
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(normalize_newlines),
        serde_json::Value::Object(map) => map.values_mut().for_each(normalize_newlines),
        _ => {}
    }
}

/// Canonical serialization: object keys sorted, line endings normalized to
/// `\n`, `max_tokens` absent when unset.
pub fn canonical(req: &ChatRequest) -> String {
    let mut value = serde_json::to_value(req).expect("request serializes");
    normalize_newlines(&mut value);
    value.to_string()
}

/// SHA-256 digest of the canonical request, as 64 hex chars.
pub fn cache_key(req: &ChatRequest) -> String {
    hex::encode(Sha256::digest(canonical(req).as_bytes()))
}

// ---------------------------------------------------------------------------
// Disk cache
// ---------------------------------------------------------------------------

/// Content-addressed store: one JSON file per entry at
/// `<dir>/<first two hex chars>/<digest>.json`, written atomically.
#[derive(Clone, Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DiskCache { dir })
    }

    /// Opens without creating; replay mode requires the directory to exist.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(GatewayError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cache directory {} does not exist", dir.display()),
            )));
        }
        Ok(DiskCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(0..2).unwrap_or("00");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Io(e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| GatewayError::CacheCorrupt { path: path.clone(), detail: e.to_string() })?;
        if entry.key != key {
            return Err(GatewayError::CacheCorrupt { path, detail: "stored key differs from filename".into() });
        }
        Ok(Some(entry))
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.path_for(&entry.key);
        let parent = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{}.tmp", entry.key));
        {
            let mut file = fs::File::create(&tmp)?;
            let mut body = serde_json::to_string_pretty(entry).expect("entry serializes");
            body.push('\n');
            file.write_all(body.as_bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Every entry file under the cache directory, sorted by path.
    pub fn entry_paths(&self) -> Result<Vec<PathBuf>, GatewayError> {
        let mut paths = Vec::new();
        let shards = match fs::read_dir(&self.dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(paths),
            Err(e) => return Err(GatewayError::Io(e)),
        };
        for shard in shards {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for file in fs::read_dir(shard.path())? {
                let file = file?;
                let path = file.path();
                if path.extension().and_then(|e| e.to_str()) == Some("json") {
                    paths.push(path);
                }
            }
        }
        paths.sort();
        Ok(paths)
    }

    /// Re-reads every entry, checking digest consistency and that the stored
    /// key matches the recomputed request digest. Returns offending files.
    pub fn verify(&self) -> Result<Vec<(PathBuf, String)>, GatewayError> {
        let mut bad = Vec::new();
        for path in self.entry_paths()? {
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    bad.push((path, e.to_string()));
                    continue;
                }
            };
            match serde_json::from_str::<CacheEntry>(&text) {
                Ok(entry) => {
                    let expected = cache_key(&entry.request);
                    if entry.key != expected {
                        bad.push((path, format!("stored key {} != digest {}", entry.key, expected)));
                    } else if path.file_stem().and_then(|s| s.to_str()) != Some(expected.as_str()) {
                        bad.push((path, "filename does not match digest".into()));
                    }
                }
                Err(e) => bad.push((path, e.to_string())),
            }
        }
        Ok(bad)
    }
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

/// Errors a transport can surface; the gateway decides what retries.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("authentication failed")]
    Auth,
    #[error("rate limited")]
    RateLimited,
    #[error("transient: {0}")]
    Transient(String),
    #[error("provider error {status}: {message}")]
    Provider { status: u16, message: String },
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Retry policy: transient transport, 5xx, and 429 failures retry with
/// exponential backoff (base 1s, doubling, deterministic jitter from the
/// request digest). Defaults give up after 3 retries.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// No waiting, for tests.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy { max_retries, base_delay: Duration::ZERO }
    }

    fn delay(&self, attempt: u32, key: &str) -> Duration {
        let base = self.base_delay.saturating_mul(1 << attempt.min(16));
        // Up to +25% jitter, derived from the digest so behavior is
        // reproducible without an RNG dependency.
        let salt = u64::from_str_radix(key.get(0..8).unwrap_or("0"), 16).unwrap_or(0);
        let jitter_num = (salt.wrapping_add(attempt as u64)) % 256;
        base + base.mul_f64(jitter_num as f64 / 1024.0)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Replay,
}

/// Thread-safe facade over a transport and a cache. Callers may issue
/// requests concurrently; at most `parallelism` are in flight at once.
pub struct Gateway {
    transport: Option<Arc<dyn Transport>>,
    cache: Option<DiskCache>,
    mode: Mode,
    limiter: Semaphore,
    retry: RetryPolicy,
}

impl Gateway {
    /// Live gateway with a write-through cache.
    pub fn live(
        transport: Arc<dyn Transport>,
        cache_dir: impl Into<PathBuf>,
        parallelism: usize,
    ) -> Result<Self, GatewayError> {
        Ok(Gateway {
            transport: Some(transport),
            cache: Some(DiskCache::open(cache_dir)?),
            mode: Mode::Live,
            limiter: Semaphore::new(parallelism),
            retry: RetryPolicy::default(),
        })
    }

    /// Replay gateway: every `complete_cached` call must hit the cache.
    pub fn replay(cache_dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(Gateway {
            transport: None,
            cache: Some(DiskCache::open_existing(cache_dir)?),
            mode: Mode::Replay,
            limiter: Semaphore::new(64),
            retry: RetryPolicy::immediate(0),
        })
    }

    /// Uncached live gateway, mainly for tests with mock transports.
    pub fn direct(transport: Arc<dyn Transport>, parallelism: usize) -> Self {
        Gateway {
            transport: Some(transport),
            cache: None,
            mode: Mode::Live,
            limiter: Semaphore::new(parallelism),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    /// One completion against the provider, with retries and the in-flight
    /// bound. Does not consult the cache.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let transport = self.transport.as_ref().ok_or_else(|| {
            GatewayError::Transport("replay gateway has no transport; use complete_cached".into())
        })?;
        let key = cache_key(req);
        let _permit = self.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            match transport.send(req) {
                Ok(resp) => return Ok(resp),
                Err(TransportError::Auth) => return Err(GatewayError::AuthFailed),
                Err(TransportError::Provider { status, message }) => {
                    return Err(GatewayError::ProviderError { status, message })
                }
                Err(retryable) => {
                    if attempt >= self.retry.max_retries {
                        return Err(match retryable {
                            TransportError::RateLimited => GatewayError::RateLimited,
                            TransportError::Transient(m) => GatewayError::Transport(m),
                            _ => unreachable!("non-retryable handled above"),
                        });
                    }
                    let delay = self.retry.delay(attempt, &key);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }

    /// Cache-through completion: hits return the stored response without
    /// touching the network; misses error in replay mode and are fetched and
    /// stored in live mode.
    pub fn complete_cached(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(entry.response);
            }
        }
        match self.mode {
            Mode::Replay => Err(GatewayError::FixtureMissing { key }),
            Mode::Live => {
                let response = self.complete(req)?;
                if let Some(cache) = &self.cache {
                    let created_at =
                        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                    cache.put(&CacheEntry { key, request: req.clone(), response: response.clone(), created_at })?;
                }
                Ok(response)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP transport (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

#[cfg(feature = "net")]
pub use http::HttpTransport;

#[cfg(feature = "net")]
mod http {
    use super::*;

    /// Blocking HTTP transport for any OpenAI-compatible endpoint: POST
    /// `<base_url>/chat/completions` with a bearer token from
    /// `HYPOTHESIM_API_KEY`.
    pub struct HttpTransport {
        base_url: String,
        api_key: String,
        client: reqwest::blocking::Client,
    }

    impl HttpTransport {
        pub fn new(base_url: impl Into<String>) -> Result<Self, GatewayError> {
            let api_key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::AuthFailed)?;
            if api_key.trim().is_empty() {
                return Err(GatewayError::AuthFailed);
            }
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .map_err(|e| GatewayError::Transport(e.to_string()))?;
            Ok(HttpTransport { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, client })
        }
    }

    #[derive(Deserialize)]
    struct WireResponse {
        choices: Vec<WireChoice>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        usage: Option<WireUsage>,
    }

    #[derive(Deserialize)]
    struct WireChoice {
        message: WireMessage,
    }

    #[derive(Deserialize)]
    struct WireMessage {
        #[serde(default)]
        content: Option<String>,
    }

    #[derive(Deserialize)]
    struct WireUsage {
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    }

    impl Transport for HttpTransport {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
            let url = format!("{}/chat/completions", self.base_url);
            let result = self
                .client
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(req)
                .send()
                .map_err(|e| TransportError::Transient(e.to_string()))?;
            let status = result.status().as_u16();
            match status {
                200..=299 => {}
                401 | 403 => return Err(TransportError::Auth),
                429 => return Err(TransportError::RateLimited),
                500..=599 => return Err(TransportError::Transient(format!("server status {status}"))),
                _ => {
                    let message = result.text().unwrap_or_default();
                    return Err(TransportError::Provider { status, message });
                }
            }
            let wire: WireResponse =
                result.json().map_err(|e| TransportError::Transient(format!("bad response body: {e}")))?;
            let content = wire
                .choices
                .first()
                .and_then(|c| c.message.content.clone())
                .ok_or_else(|| TransportError::Transient("response carries no choices".into()))?;
            Ok(ChatResponse {
                content,
                model_echo: wire.model,
                usage: wire
                    .usage
                    .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens }),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Test transports
// ---------------------------------------------------------------------------

/// Scripted transport: pops canned outcomes in order; repeats the last one
/// when the script runs dry. Records every request it sees.
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<String, TransportKind>>>,
    last: Mutex<Option<Result<String, TransportKind>>>,
    pub seen: Mutex<Vec<ChatRequest>>,
    calls: Mutex<usize>,
}

/// Cloneable stand-in for TransportError in scripts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    Auth,
    RateLimited,
    Transient,
    Provider,
}

impl ScriptedTransport {
    pub fn new(outcomes: Vec<Result<String, TransportKind>>) -> Self {
        ScriptedTransport {
            script: Mutex::new(outcomes.into()),
            last: Mutex::new(None),
            seen: Mutex::new(Vec::new()),
            calls: Mutex::new(0),
        }
    }

    pub fn always(content: impl Into<String>) -> Self {
        Self::new(vec![Ok(content.into())])
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("calls lock")
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        *self.calls.lock().expect("calls lock") += 1;
        self.seen.lock().expect("seen lock").push(req.clone());
        let mut script = self.script.lock().expect("script lock");
        let outcome = match script.pop_front() {
            Some(o) => {
                *self.last.lock().expect("last lock") = Some(o.clone());
                o
            }
            None => self.last.lock().expect("last lock").clone().unwrap_or(Err(TransportKind::Transient)),
        };
        match outcome {
            Ok(content) => Ok(ChatResponse::text(content)),
            Err(TransportKind::Auth) => Err(TransportError::Auth),
            Err(TransportKind::RateLimited) => Err(TransportError::RateLimited),
            Err(TransportKind::Transient) => Err(TransportError::Transient("scripted".into())),
            Err(TransportKind::Provider) => Err(TransportError::Provider { status: 400, message: "scripted".into() }),
        }
    }
}

/// Transport that refuses every call; proves a path is network-free.
pub struct RefusingTransport;

impl Transport for RefusingTransport {
    fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        panic!("network transport invoked in a replay-only path");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(model: &str, user: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages: vec![Message::system("sys"), Message::user(user)],
            temperature,
            max_tokens: None,
        }
    }

    #[test]
    fn canonical_sorts_keys_and_normalizes_newlines() {
        let mut req = request("m", "line1\r\nline2\rline3", 0.0);
        let canon = canonical(&req);
        assert!(canon.contains("line1\\nline2\\nline3"));
        let messages_at = canon.find("\"messages\"").unwrap();
        let model_at = canon.find("\"model\"").unwrap();
        let temp_at = canon.find("\"temperature\"").unwrap();
        assert!(messages_at < model_at && model_at < temp_at);
        assert!(!canon.contains("max_tokens"));
        req.max_tokens = Some(64);
        assert!(canonical(&req).contains("max_tokens"));
    }

    #[test]
    fn cache_key_sensitivity() {
        let base = request("m", "hello", 0.0);
        assert_eq!(cache_key(&base), cache_key(&base.clone()));
        assert_eq!(cache_key(&base).len(), 64);
        let hotter = request("m", "hello", 0.7);
        assert_ne!(cache_key(&base), cache_key(&hotter));
        let other_model = request("m2", "hello", 0.0);
        assert_ne!(cache_key(&base), cache_key(&other_model));
        let crlf = request("m", "hel\r\nlo", 0.0);
        let lf = request("m", "hel\nlo", 0.0);
        assert_eq!(cache_key(&crlf), cache_key(&lf));
    }

    #[test]
    fn empty_messages_rejected() {
        let req = ChatRequest { model: "m".into(), messages: vec![], temperature: 0.0, max_tokens: None };
        assert!(matches!(req.validate(), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn cache_round_trip_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("m", "q", 0.0);
        let entry = CacheEntry {
            key: cache_key(&req),
            request: req.clone(),
            response: ChatResponse::text("a"),
            created_at: 1,
        };
        {
            let cache = DiskCache::open(dir.path()).unwrap();
            cache.put(&entry).unwrap();
        }
        // Fresh handle, same directory: the entry survives a "restart".
        let cache = DiskCache::open(dir.path()).unwrap();
        let got = cache.get(&entry.key).unwrap().unwrap();
        assert_eq!(got, entry);
        assert_eq!(cache.entry_paths().unwrap().len(), 1);
    }

    #[test]
    fn corrupt_cache_file_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let key = "ab".repeat(32);
        let path = dir.path().join("ab").join(format!("{key}.json"));
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{ not json").unwrap();
        match cache.get(&key) {
            Err(GatewayError::CacheCorrupt { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected CacheCorrupt, got {other:?}"),
        }
        let bad = cache.verify().unwrap();
        assert_eq!(bad.len(), 1);
    }

    #[test]
    fn second_identical_call_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(ScriptedTransport::always("{\"hair\": 1}"));
        let gateway = Gateway::live(transport.clone(), dir.path(), 2).unwrap();
        let req = request("m", "hair?", 0.0);
        let a = gateway.complete_cached(&req).unwrap();
        let b = gateway.complete_cached(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(transport.calls(), 1);
    }

    #[test]
    fn replay_mode_errors_on_missing_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path()).unwrap();
        let gateway = Gateway::replay(dir.path()).unwrap();
        let req = request("m", "unseen", 0.0);
        match gateway.complete_cached(&req) {
            Err(GatewayError::FixtureMissing { key }) => assert_eq!(key, cache_key(&req)),
            other => panic!("expected FixtureMissing, got {other:?}"),
        }
    }

    #[test]
    fn replay_mode_requires_existing_dir() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(Gateway::replay(&missing).is_err());
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            Err(TransportKind::Transient),
            Err(TransportKind::RateLimited),
            Ok("ok".into()),
        ]));
        let gateway = Gateway::direct(transport.clone(), 1).with_retry(RetryPolicy::immediate(3));
        let resp = gateway.complete(&request("m", "q", 0.0)).unwrap();
        assert_eq!(resp.content, "ok");
        assert_eq!(transport.calls(), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let transport = Arc::new(ScriptedTransport::new(vec![Err(TransportKind::RateLimited)]));
        let gateway = Gateway::direct(transport.clone(), 1).with_retry(RetryPolicy::immediate(2));
        assert!(matches!(gateway.complete(&request("m", "q", 0.0)), Err(GatewayError::RateLimited)));
        assert_eq!(transport.calls(), 3); // initial + 2 retries
    }

    #[test]
    fn auth_and_provider_errors_do_not_retry() {
        let transport = Arc::new(ScriptedTransport::new(vec![Err(TransportKind::Auth)]));
        let gateway = Gateway::direct(transport.clone(), 1).with_retry(RetryPolicy::immediate(5));
        assert!(matches!(gateway.complete(&request("m", "q", 0.0)), Err(GatewayError::AuthFailed)));
        assert_eq!(transport.calls(), 1);

        let transport = Arc::new(ScriptedTransport::new(vec![Err(TransportKind::Provider)]));
        let gateway = Gateway::direct(transport.clone(), 1).with_retry(RetryPolicy::immediate(5));
        assert!(matches!(
            gateway.complete(&request("m", "q", 0.0)),
            Err(GatewayError::ProviderError { status: 400, .. })
        ));
        assert_eq!(transport.calls(), 1);
    }

    /// Transport that records the concurrent-call high-water mark.
    struct GaugeTransport {
        current: Mutex<usize>,
        peak: Mutex<usize>,
        cv: Condvar,
    }

    impl GaugeTransport {
        fn new() -> Self {
            GaugeTransport { current: Mutex::new(0), peak: Mutex::new(0), cv: Condvar::new() }
        }
        fn peak(&self) -> usize {
            *self.peak.lock().unwrap()
        }
    }

    impl Transport for GaugeTransport {
        fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, TransportError> {
            let mut cur = self.current.lock().unwrap();
            *cur += 1;
            {
                let mut peak = self.peak.lock().unwrap();
                *peak = (*peak).max(*cur);
            }
            // Linger briefly so calls overlap and the peak is observable.
            let (mut cur, _) = self.cv.wait_timeout(cur, Duration::from_millis(10)).unwrap();
            *cur -= 1;
            drop(cur);
            self.cv.notify_all();
            Ok(ChatResponse::text("ok"))
        }
    }

    #[test]
    fn parallelism_is_bounded() {
        let transport = Arc::new(GaugeTransport::new());
        let gateway = Arc::new(Gateway::direct(transport.clone(), 2).with_retry(RetryPolicy::immediate(0)));
        std::thread::scope(|scope| {
            for i in 0..8 {
                let gateway = Arc::clone(&gateway);
                scope.spawn(move || {
                    let req = request("m", &format!("q{i}"), 0.0);
                    gateway.complete(&req).unwrap();
                });
            }
        });
        assert!(transport.peak() <= 2, "peak concurrency {} exceeded bound", transport.peak());
        assert!(transport.peak() >= 1);
    }
}
