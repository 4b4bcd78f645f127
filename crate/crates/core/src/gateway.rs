//! Batch driver for chat-completion endpoints: bounded in-flight requests,
//! transient-failure retries with exponential backoff, optional token-bucket
//! rate limiting, an OpenAI-compatible HTTP provider, a deterministic
//! scripted mock for offline runs, and the append-only run log that lets
//! scoring be replayed without re-querying.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("auth error: {0}")]
    Auth(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed run log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}

/// One chat completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Unique within a batch; results are keyed by it.
    pub request_id: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Ok,
    TransportError,
    ProviderRefusedEmpty,
}

/// Provider text for one request, or the failure that exhausted retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub request_id: String,
    pub raw_text: String,
    pub status: RequestStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How a single provider attempt failed.
#[derive(Debug, Clone)]
pub enum ProviderFailure {
    /// Retryable: connection problems, timeouts, 429/5xx.
    Transient(String),
    Auth(String),
    Fatal(String),
}

/// One synchronous completion attempt against some backend.
pub trait Provider: Send + Sync {
    fn complete_once(&self, request: &CompletionRequest) -> Result<String, ProviderFailure>;
}

/// Retry policy for transient transport failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Token bucket limiting request starts to a requests-per-minute budget.
struct TokenBucket {
    state: Mutex<(f64, Instant)>,
    per_minute: f64,
}

impl TokenBucket {
    fn new(per_minute: u32) -> Self {
        Self {
            state: Mutex::new((per_minute as f64, Instant::now())),
            per_minute: per_minute as f64,
        }
    }

    fn acquire(&self) {
        loop {
            {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let (ref mut tokens, ref mut last) = *state;
                let elapsed = last.elapsed().as_secs_f64();
                *tokens = (*tokens + elapsed * self.per_minute / 60.0).min(self.per_minute);
                *last = Instant::now();
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Drives a provider with retries, rate limiting and bounded concurrency.
pub struct Gateway {
    provider: Box<dyn Provider>,
    retry: RetryPolicy,
    rate: Option<TokenBucket>,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            rate: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_requests_per_minute(mut self, rpm: Option<u32>) -> Self {
        self.rate = rpm.filter(|r| *r > 0).map(TokenBucket::new);
        self
    }

    /// Complete one request. Transient transport failures are retried with
    /// exponential backoff up to the configured cap; auth/config failures
    /// are never retried, and content-level issues are not the gateway's
    /// concern. Empty provider text is surfaced as `ProviderRefusedEmpty`.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let mut attempts = 0u32;
        loop {
            if let Some(rate) = &self.rate {
                rate.acquire();
            }
            attempts += 1;
            match self.provider.complete_once(request) {
                Ok(raw_text) => {
                    let status = if raw_text.trim().is_empty() {
                        RequestStatus::ProviderRefusedEmpty
                    } else {
                        RequestStatus::Ok
                    };
                    return Ok(CompletionResult {
                        request_id: request.request_id.clone(),
                        raw_text,
                        status,
                        attempts,
                        error: None,
                    });
                }
                Err(ProviderFailure::Transient(message)) => {
                    if attempts > self.retry.max_retries {
                        return Err(GatewayError::Transport { attempts, message });
                    }
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
                Err(ProviderFailure::Auth(m)) => return Err(GatewayError::Auth(m)),
                Err(ProviderFailure::Fatal(m)) => return Err(GatewayError::Config(m)),
            }
        }
    }

    /// Run a batch with at most `max_in_flight` requests in flight. Results
    /// come back in input order regardless of completion order; per-request
    /// failures are folded into `TransportError` entries rather than
    /// aborting the batch.
    pub fn run_batch(
        &self,
        requests: &[CompletionRequest],
        max_in_flight: usize,
    ) -> Vec<CompletionResult> {
        assert!(max_in_flight >= 1, "max_in_flight must be >= 1");
        if requests.is_empty() {
            return Vec::new();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<CompletionResult>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..max_in_flight.min(requests.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let request = &requests[i];
                    let result = match self.complete(request) {
                        Ok(result) => result,
                        Err(e) => {
                            let attempts = match e {
                                GatewayError::Transport { attempts, .. } => attempts,
                                _ => 1,
                            };
                            CompletionResult {
                                request_id: request.request_id.clone(),
                                raw_text: String::new(),
                                status: RequestStatus::TransportError,
                                attempts,
                                error: Some(e.to_string()),
                            }
                        }
                    };
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });

        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("worker filled slot")
            })
            .collect()
    }
}

/// Scripted offline provider. Responses are keyed by request id, with an
/// optional default; per-id transient failures can be injected to exercise
/// the retry path.
pub struct MockProvider {
    responses: BTreeMap<String, String>,
    default: Option<String>,
    fail_first: Mutex<BTreeMap<String, u32>>,
}

impl MockProvider {
    pub fn scripted(responses: BTreeMap<String, String>) -> Self {
        Self {
            responses,
            default: None,
            fail_first: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_default(mut self, text: &str) -> Self {
        self.default = Some(text.to_string());
        self
    }

    /// Make the first `n` attempts for `request_id` fail transiently.
    pub fn fail_times(self, request_id: &str, n: u32) -> Self {
        self.fail_first
            .lock()
            .expect("mock state poisoned")
            .insert(request_id.to_string(), n);
        self
    }
}

impl Provider for MockProvider {
    fn complete_once(&self, request: &CompletionRequest) -> Result<String, ProviderFailure> {
        {
            let mut failures = self.fail_first.lock().expect("mock state poisoned");
            if let Some(left) = failures.get_mut(&request.request_id) {
                if *left > 0 {
                    *left -= 1;
                    return Err(ProviderFailure::Transient("injected failure".to_string()));
                }
            }
        }
        self.responses
            .get(&request.request_id)
            .cloned()
            .or_else(|| self.default.clone())
            .ok_or_else(|| {
                ProviderFailure::Fatal(format!("no scripted response for {}", request.request_id))
            })
    }
}

/// Configuration for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL up to the API root, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. None for
    /// endpoints that need no credential (e.g. a local server).
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// OpenAI-compatible chat-completions provider (POST with model, messages,
/// temperature and max_tokens). Credentials come from the environment only.
pub struct OpenAiCompatProvider {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl OpenAiCompatProvider {
    pub fn new(config: &HttpProviderConfig) -> Result<Self, GatewayError> {
        if !config.base_url.starts_with("http://") && !config.base_url.starts_with("https://") {
            return Err(GatewayError::Config(format!(
                "base_url `{}` must start with http:// or https://",
                config.base_url
            )));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Auth(format!(
                    "credential environment variable `{var}` is not set"
                ))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Self {
            agent,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl Provider for OpenAiCompatProvider {
    fn complete_once(&self, request: &CompletionRequest) -> Result<String, ProviderFailure> {
        let body = ChatBody {
            model: &request.model_name,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &request.system,
                },
                ChatMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = builder
            .send_json(&body)
            .map_err(|e| ProviderFailure::Transient(e.to_string()))?;

        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            return Err(ProviderFailure::Auth(format!("http status {status}")));
        }
        if status == 408 || status == 429 || status >= 500 {
            return Err(ProviderFailure::Transient(format!("http status {status}")));
        }
        if status >= 400 {
            return Err(ProviderFailure::Fatal(format!("http status {status}")));
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderFailure::Fatal(format!("unparsable response body: {e}")))?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .unwrap_or_default();
        Ok(text)
    }
}

/// Hex-encoded SHA-256, used for content-addressing run logs and prompts.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// First line of a run log; guards replays against mixing configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub run_label: String,
    pub model_name: String,
    pub config_hash: String,
}

/// Append-only run log: a header line followed by one JSON record per
/// completed request, keyed by request_id.
pub struct RunLogWriter {
    file: File,
}

impl RunLogWriter {
    pub fn create(path: &Path, header: &RunLogHeader) -> Result<Self, GatewayError> {
        let mut file = File::create(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let line = serde_json::to_string(header).expect("header serializes");
        writeln!(file, "{line}").map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self { file })
    }

    pub fn open_append(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self { file })
    }

    pub fn append(&mut self, result: &CompletionResult) -> Result<(), GatewayError> {
        let line = serde_json::to_string(result).expect("result serializes");
        writeln!(self.file, "{line}").map_err(|source| GatewayError::Io {
            path: "<run log>".to_string(),
            source,
        })
    }
}

/// Load a run log written by [`RunLogWriter`].
pub fn load_run_log(path: &Path) -> Result<(RunLogHeader, Vec<CompletionResult>), GatewayError> {
    let file = File::open(path).map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header_line = lines
        .next()
        .ok_or(GatewayError::MalformedLog {
            line: 0,
            reason: "empty run log".to_string(),
        })?
        .1
        .map_err(|e| GatewayError::MalformedLog {
            line: 0,
            reason: e.to_string(),
        })?;
    let header: RunLogHeader =
        serde_json::from_str(&header_line).map_err(|e| GatewayError::MalformedLog {
            line: 0,
            reason: e.to_string(),
        })?;
    let mut results = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| GatewayError::MalformedLog {
            line: i,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let result: CompletionResult =
            serde_json::from_str(&line).map_err(|e| GatewayError::MalformedLog {
                line: i,
                reason: e.to_string(),
            })?;
        results.push(result);
    }
    Ok((header, results))
}
