//! Text-completion transport: retrying client, HTTP backend and mocks.

mod http;
mod mock;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub use http::{HttpBackend, WireFormat};
pub use mock::{
    mock_from_listing, mock_from_transcript, prompt_digest, ListingMock, MockBackend,
    ScriptedBackend,
};

pub const ENV_ENDPOINT: &str = "EMBODIED_LOOP_ENDPOINT";
pub const ENV_API_KEY: &str = "EMBODIED_LOOP_API_KEY";
pub const ENV_MODEL: &str = "EMBODIED_LOOP_MODEL";
pub const ENV_WIRE: &str = "EMBODIED_LOOP_WIRE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

/// One backend attempt's failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("backend error: {0}")]
    Fatal(String),
    #[error("prompt {index} diverged from the listing at byte {offset}")]
    PromptDivergence { index: usize, offset: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("prompt {index} diverged from the listing at byte {offset}")]
    PromptDivergence { index: usize, offset: usize },
}

/// Anything that can turn a prompt into text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: Option<String>,
    /// Never serialized; read from the environment.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub wire: WireFormat,
    #[serde(with = "duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(with = "duration_ms", default = "default_backoff")]
    pub backoff_base: Duration,
    /// Requests per second for the shared token bucket; `None` disables limiting.
    #[serde(default)]
    pub rate_limit: Option<f64>,
    #[serde(default = "default_burst")]
    pub burst: u32,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_timeout() -> Duration {
    Duration::from_secs(30)
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> Duration {
    Duration::from_millis(500)
}
fn default_burst() -> u32 {
    1
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_key: None,
            model: None,
            wire: WireFormat::default(),
            timeout: default_timeout(),
            retries: default_retries(),
            backoff_base: default_backoff(),
            rate_limit: None,
            burst: default_burst(),
            audit_log: None,
        }
    }
}

impl ClientConfig {
    /// Fills endpoint, key, model and wire format from the environment.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|s| !s.is_empty());
        let mut c = Self {
            endpoint: var(ENV_ENDPOINT),
            api_key: var(ENV_API_KEY),
            model: var(ENV_MODEL),
            ..Self::default()
        };
        if let Ok(w) = std::env::var(ENV_WIRE) {
            if let Ok(w) = w.parse() {
                c.wire = w;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout.is_zero() {
            return Err(ClientError::InvalidRequest(
                "timeout must be positive".into(),
            ));
        }
        if self.rate_limit.is_some_and(|r| !(r > 0.0)) {
            return Err(ClientError::InvalidRequest(
                "rate limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        Self {
            rate,
            capacity,
            tokens: capacity,
            last: Instant::now(),
        }
    }

    /// Takes one token, returning how long the caller must wait first.
    fn reserve(&mut self) -> Duration {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate)
            .min(self.capacity);
        self.last = now;
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.rate)
        }
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    unix_ms: u128,
    prompt_sha256: &'a str,
    response_sha256: Option<String>,
    attempts: u32,
    outcome: &'a str,
}

/// Retrying, rate-limited, audited front end over a backend.
///
/// Shareable across threads; the token bucket and audit sink are the only
/// shared mutable state.
pub struct CompletionClient {
    config: ClientConfig,
    backend: Arc<dyn CompletionBackend>,
    bucket: Option<Mutex<TokenBucket>>,
    audit: Option<Mutex<File>>,
    attempts: AtomicU64,
}

impl CompletionClient {
    pub fn new(
        config: ClientConfig,
        backend: Arc<dyn CompletionBackend>,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        let audit = match &config.audit_log {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| {
                        ClientError::InvalidRequest(format!("audit log {}: {e}", p.display()))
                    })?,
            )),
            None => None,
        };
        let bucket = config
            .rate_limit
            .map(|r| Mutex::new(TokenBucket::new(r, config.burst)));
        Ok(Self {
            config,
            backend,
            bucket,
            audit,
            attempts: AtomicU64::new(0),
        })
    }

    /// Client over the HTTP backend configured in `config`.
    pub fn http(config: ClientConfig) -> Result<Self, ClientError> {
        let backend = HttpBackend::new(&config)?;
        Self::new(config, Arc::new(backend))
    }

    /// Total backend attempts made so far, including retries.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn throttle(&self) {
        if let Some(b) = &self.bucket {
            let wait = b.lock().expect("bucket lock").reserve();
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
    }

    fn audit(&self, prompt_digest: &str, response: Option<&str>, attempts: u32, outcome: &str) {
        let Some(sink) = &self.audit else { return };
        let rec = AuditRecord {
            unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
            prompt_sha256: prompt_digest,
            response_sha256: response.map(sha256_hex),
            attempts,
            outcome,
        };
        let line = serde_json::to_string(&rec).expect("audit record serializes");
        let mut f = sink.lock().expect("audit lock");
        if let Err(e) = writeln!(f, "{line}") {
            warn!("audit write failed: {e}");
        }
    }

    /// Sends `request`, retrying transient failures and timeouts with
    /// exponential backoff, and truncates the reply at the first stop sequence.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        if request.max_tokens == 0 {
            return Err(ClientError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        let digest = sha256_hex(&request.prompt);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.throttle();
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(text) => {
                    let text = truncate_at_stop(&text, &request.stop);
                    self.audit(&digest, Some(&text), attempt, "ok");
                    return Ok(text);
                }
                Err(BackendError::Auth(m)) => {
                    self.audit(&digest, None, attempt, "auth");
                    return Err(ClientError::AuthError(m));
                }
                Err(BackendError::PromptDivergence { index, offset }) => {
                    self.audit(&digest, None, attempt, "divergence");
                    return Err(ClientError::PromptDivergence { index, offset });
                }
                Err(BackendError::Fatal(m)) => {
                    self.audit(&digest, None, attempt, "fatal");
                    return Err(ClientError::BackendUnavailable {
                        attempts: attempt,
                        last: m,
                    });
                }
                Err(e @ (BackendError::Transient(_) | BackendError::Timeout(_))) => {
                    if attempt > self.config.retries {
                        self.audit(&digest, None, attempt, "exhausted");
                        return Err(ClientError::BackendUnavailable {
                            attempts: attempt,
                            last: e.to_string(),
                        });
                    }
                    let delay = self
                        .config
                        .backoff_base
                        .saturating_mul(1 << (attempt - 1).min(16));
                    debug!(attempt, ?delay, "retrying after {e}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
