//! Uniform access to chat-completion and embedding endpoints.
//!
//! One [`Gateway`] fronts either a live HTTP backend or a deterministic
//! scripted backend behind the same surface: bounded retries with exponential
//! backoff, a hard concurrency cap, and reasoning-trace filtering on every
//! completion. All agent, environment, and judge calls go through here, so
//! model nondeterminism is quarantined in one place.

mod filter;
mod http;
mod script;

pub use filter::{strip_reasoning_traces, FilterError, TraceFilter};
pub use http::HttpBackend;
pub use script::{hash_seeded_unit_vector, RecordedRequest, Script, ScriptedBackend, TRANSIENT_DIRECTIVE};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("scripted tag `{0}` has no remaining responses")]
    ScriptExhausted(String),
    #[error("non-retryable backend error (status {status}): {message}")]
    NonRetryable { status: u16, message: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

/// Errors surfaced by a transport; the gateway owns the retry policy.
#[derive(Debug)]
pub enum TransportError {
    Transient(String),
    Permanent { status: u16, message: String },
    ScriptExhausted(String),
}

pub trait Transport: Send + Sync {
    fn chat(&self, request: &CompletionRequest) -> Result<String, TransportError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Free-form routing label; scripted backends key their response queues
    /// on it, HTTP backends ignore it.
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(
        model_id: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
        tag: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".to_string()));
        }
        if messages[0].role != Role::System {
            return Err(GatewayError::InvalidRequest(
                "first message must have role system".to_string(),
            ));
        }
        for m in &messages {
            if matches!(m.role, Role::System | Role::User) && m.content.trim().is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "{} message content must be non-empty",
                    m.role.as_str()
                )));
            }
        }
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(GatewayError::InvalidRequest("temperature must be ≥ 0".to_string()));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".to_string()));
        }
        Ok(CompletionRequest {
            model_id: model_id.into(),
            messages,
            temperature,
            max_tokens,
            tag: tag.into(),
        })
    }

    /// Concatenated system-message text (prompt-assembly assertions).
    pub fn system_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Concatenated user-message text (prompt-assembly assertions).
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// Raw model output, kept for audit.
    pub text: String,
    /// Output with reasoning traces removed; what callers act on.
    pub filtered_text: String,
    /// Total tries, counting the successful one. Always ≤ max_attempts.
    pub attempts: u32,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub initial_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
    /// Randomized spread over delays. Disabled under scripted backends so
    /// replays stay deterministic.
    pub jitter: bool,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy { initial_ms: 250, multiplier: 2.0, max_delay_ms: 8_000, jitter: true }
    }
}

impl BackoffPolicy {
    /// Base delay before retry number `attempt` (1-based count of failures
    /// so far). Non-decreasing in `attempt` and bounded by `max_delay_ms`.
    pub fn base_delay(&self, attempt: u32) -> Duration {
        let exp = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }

    fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let base = self.base_delay(attempt);
        if self.jitter && base > Duration::ZERO {
            // Equal jitter: keep at least half the base so delays stay
            // non-decreasing for multiplier ≥ 2.
            let half = base / 2;
            half + Duration::from_secs_f64(rng.random_range(0.0..=1.0) * half.as_secs_f64())
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BackendKind {
    Http {
        base_url: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_embed_model")]
        embed_model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
    Scripted {
        script: Script,
    },
}

fn default_embed_model() -> String {
    "embedding".to_string()
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    pub max_attempts: u32,
    pub backoff: BackoffPolicy,
    pub max_concurrency: usize,
    #[serde(default)]
    pub filter: TraceFilter,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

fn default_embed_dim() -> usize {
    32
}

impl BackendConfig {
    pub fn scripted(name: &str, script: Script) -> Self {
        BackendConfig {
            name: name.to_string(),
            kind: BackendKind::Scripted { script },
            max_attempts: 4,
            // Jitter off and zero delay: scripted runs never wait.
            backoff: BackoffPolicy { initial_ms: 0, multiplier: 2.0, max_delay_ms: 0, jitter: false },
            max_concurrency: 8,
            filter: TraceFilter::default(),
            embed_dim: default_embed_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_attempts < 1 {
            return Err(GatewayError::InvalidConfig("max_attempts must be ≥ 1".to_string()));
        }
        if self.max_concurrency < 1 {
            return Err(GatewayError::InvalidConfig("max_concurrency must be ≥ 1".to_string()));
        }
        if self.backoff.multiplier < 1.0 {
            return Err(GatewayError::InvalidConfig(
                "backoff multiplier must be ≥ 1 so delays never decrease".to_string(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore with a high-water-mark probe.
struct InFlightLimiter {
    state: Mutex<usize>,
    cv: Condvar,
    limit: usize,
    peak: AtomicUsize,
}

impl InFlightLimiter {
    fn new(limit: usize) -> Self {
        InFlightLimiter { state: Mutex::new(0), cv: Condvar::new(), limit, peak: AtomicUsize::new(0) }
    }

    fn acquire(&self) {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        self.peak.fetch_max(*in_flight, Ordering::SeqCst);
    }

    fn release(&self) {
        let mut in_flight = self.state.lock().unwrap();
        *in_flight -= 1;
        self.cv.notify_one();
    }
}

pub struct Gateway {
    transport: Box<dyn Transport>,
    scripted: Option<std::sync::Arc<ScriptedBackend>>,
    config: BackendConfig,
    limiter: InFlightLimiter,
}

impl Gateway {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let limiter = InFlightLimiter::new(config.max_concurrency);
        let (transport, scripted): (Box<dyn Transport>, _) = match &config.kind {
            BackendKind::Scripted { script } => {
                let backend =
                    std::sync::Arc::new(ScriptedBackend::new(script.clone(), config.embed_dim));
                (Box::new(SharedTransport(backend.clone())), Some(backend))
            }
            BackendKind::Http { base_url, api_key, embed_model, timeout_ms } => {
                let key = api_key.clone().or_else(|| api_key_from_env(&config.name));
                let backend = HttpBackend::new(
                    base_url,
                    key,
                    embed_model,
                    Duration::from_millis(*timeout_ms),
                );
                (Box::new(backend), None)
            }
        };
        Ok(Gateway { transport, scripted, config, limiter })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn filter(&self) -> &TraceFilter {
        &self.config.filter
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Highest number of simultaneously in-flight requests observed so far.
    pub fn max_in_flight_observed(&self) -> usize {
        self.limiter.peak.load(Ordering::SeqCst)
    }

    /// Requests seen by the scripted backend, in consumption order.
    /// `None` for HTTP backends.
    pub fn recorded_requests(&self) -> Option<Vec<RecordedRequest>> {
        self.scripted.as_ref().map(|s| s.recorded_requests())
    }

    /// Inject artificial latency into a scripted backend (concurrency probes).
    pub fn set_scripted_call_delay(&self, delay: Duration) {
        if let Some(s) = &self.scripted {
            s.set_call_delay(delay);
        }
    }

    /// Issue a chat completion with bounded retries; the returned text is
    /// trace-filtered. Scripted backends consume the next response for the
    /// request tag, in order.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let started = Instant::now();
        let mut rng = rand::rng();
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            self.limiter.acquire();
            let outcome = self.transport.chat(request);
            self.limiter.release();
            match outcome {
                Ok(text) => {
                    let filtered_text = self.config.filter.strip(&text)?;
                    return Ok(CompletionResult {
                        text,
                        filtered_text,
                        attempts: attempt,
                        latency: started.elapsed(),
                    });
                }
                Err(TransportError::Transient(msg)) => {
                    last_error = msg;
                    if attempt < self.config.max_attempts {
                        let delay = self.config.backoff.delay(attempt, &mut rng);
                        if delay > Duration::ZERO {
                            std::thread::sleep(delay);
                        }
                    }
                }
                Err(TransportError::Permanent { status, message }) => {
                    return Err(GatewayError::NonRetryable { status, message });
                }
                Err(TransportError::ScriptExhausted(tag)) => {
                    return Err(GatewayError::ScriptExhausted(tag));
                }
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts: self.config.max_attempts,
            last_error,
        })
    }

    /// Embed non-empty text. Scripted backends derive a deterministic
    /// hash-seeded unit vector; dimensionality is fixed per backend.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let mut rng = rand::rng();
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            self.limiter.acquire();
            let outcome = self.transport.embed(text);
            self.limiter.release();
            match outcome {
                Ok(vector) => return Ok(vector),
                Err(TransportError::Transient(msg)) => {
                    last_error = msg;
                    if attempt < self.config.max_attempts {
                        let delay = self.config.backoff.delay(attempt, &mut rng);
                        if delay > Duration::ZERO {
                            std::thread::sleep(delay);
                        }
                    }
                }
                Err(TransportError::Permanent { status, message }) => {
                    return Err(GatewayError::NonRetryable { status, message });
                }
                Err(TransportError::ScriptExhausted(tag)) => {
                    return Err(GatewayError::ScriptExhausted(tag));
                }
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts: self.config.max_attempts,
            last_error,
        })
    }
}

/// Adapter so the gateway can keep a typed handle to the scripted backend
/// (for the request-log probe) while using it through the trait.
struct SharedTransport(std::sync::Arc<ScriptedBackend>);

impl Transport for SharedTransport {
    fn chat(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        self.0.chat(request)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, TransportError> {
        self.0.embed(text)
    }
}

/// API credentials resolve from the environment by backend name:
/// backend `npc` reads `TROUPE_API_KEY_NPC`.
fn api_key_from_env(backend_name: &str) -> Option<String> {
    let var = format!(
        "TROUPE_API_KEY_{}",
        backend_name.to_uppercase().replace(['-', '.'], "_")
    );
    std::env::var(var).ok().filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str) -> CompletionRequest {
        CompletionRequest::new(
            "m",
            vec![ChatMessage::system("sys"), ChatMessage::user("u")],
            0.7,
            256,
            tag,
        )
        .unwrap()
    }

    fn scripted_gateway(entries: &[(&str, &[&str])]) -> Gateway {
        let mut script = Script::new();
        for (tag, responses) in entries {
            for r in *responses {
                script.push(tag, *r);
            }
        }
        Gateway::new(BackendConfig::scripted("test", script)).unwrap()
    }

    #[test]
    fn scripted_echo() {
        let gw = scripted_gateway(&[("npc.react.r1", &["She nods."])]);
        let result = gw.complete(&req("npc.react.r1")).unwrap();
        assert_eq!(result.text, "She nods.");
        assert_eq!(result.filtered_text, "She nods.");
        assert_eq!(result.attempts, 1);
    }

    #[test]
    fn two_transient_failures_then_success_gives_three_attempts() {
        // Oracle: the failure schedule is [fail, fail, ok]; replaying it
        // counts 3 tries.
        let gw = scripted_gateway(&[("t", &[TRANSIENT_DIRECTIVE, TRANSIENT_DIRECTIVE, "ok"])]);
        let result = gw.complete(&req("t")).unwrap();
        assert_eq!(result.filtered_text, "ok");
        assert_eq!(result.attempts, 3);
    }

    #[test]
    fn exhausted_retry_budget_is_backend_unavailable() {
        let gw = scripted_gateway(&[(
            "t",
            &[TRANSIENT_DIRECTIVE, TRANSIENT_DIRECTIVE, TRANSIENT_DIRECTIVE, TRANSIENT_DIRECTIVE],
        )]);
        match gw.complete(&req("t")) {
            Err(GatewayError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected BackendUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn permanent_failure_is_non_retryable() {
        let gw = scripted_gateway(&[("t", &["%PERMANENT:401%", "never used"])]);
        match gw.complete(&req("t")) {
            Err(GatewayError::NonRetryable { status, .. }) => assert_eq!(status, 401),
            other => panic!("expected NonRetryable, got {other:?}"),
        }
    }

    #[test]
    fn completion_output_is_trace_filtered() {
        let gw = scripted_gateway(&[("t", &["<think>hmm</think>\"Hello.\""])]);
        let result = gw.complete(&req("t")).unwrap();
        assert_eq!(result.text, "<think>hmm</think>\"Hello.\"");
        assert_eq!(result.filtered_text, "\"Hello.\"");
    }

    #[test]
    fn replay_is_byte_identical() {
        let entries: &[(&str, &[&str])] = &[("a", &["one", "two"]), ("b", &["three"])];
        let run = |entries: &[(&str, &[&str])]| -> Vec<String> {
            let gw = scripted_gateway(entries);
            vec![
                gw.complete(&req("a")).unwrap().filtered_text,
                gw.complete(&req("b")).unwrap().filtered_text,
                gw.complete(&req("a")).unwrap().filtered_text,
            ]
        };
        assert_eq!(run(entries), run(entries));
    }

    #[test]
    fn embed_rejects_empty_text() {
        let gw = scripted_gateway(&[]);
        assert!(matches!(gw.embed("   "), Err(GatewayError::EmptyText)));
    }

    #[test]
    fn embed_is_deterministic_and_unit_norm() {
        let gw = scripted_gateway(&[]);
        let a = gw.embed("hello world").unwrap();
        let b = gw.embed("hello world").unwrap();
        assert_eq!(a, b);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn base_delays_non_decreasing_and_capped() {
        let policy = BackoffPolicy { initial_ms: 100, multiplier: 2.0, max_delay_ms: 1500, jitter: false };
        let delays: Vec<Duration> = (1..=8).map(|n| policy.base_delay(n)).collect();
        for pair in delays.windows(2) {
            assert!(pair[0] <= pair[1], "delays must never decrease: {delays:?}");
        }
        assert!(delays.iter().all(|d| *d <= Duration::from_millis(1500)));
        assert_eq!(delays[4], Duration::from_millis(1500));
    }

    #[test]
    fn requests_never_exceed_max_concurrency() {
        let mut script = Script::new();
        for _ in 0..16 {
            script.push("t", "ok");
        }
        let mut config = BackendConfig::scripted("test", script);
        config.max_concurrency = 3;
        let gw = Gateway::new(config).unwrap();
        gw.set_scripted_call_delay(Duration::from_millis(5));
        let gw = std::sync::Arc::new(gw);

        std::thread::scope(|scope| {
            for _ in 0..16 {
                let gw = gw.clone();
                scope.spawn(move || {
                    gw.complete(&req("t")).unwrap();
                });
            }
        });

        let peak = gw.max_in_flight_observed();
        assert!(peak <= 3, "peak in-flight {peak} exceeded limit 3");
        assert!(peak >= 2, "probe never observed overlap; peak {peak}");
    }

    #[test]
    fn invalid_requests_rejected() {
        assert!(CompletionRequest::new("m", vec![], 0.0, 10, "t").is_err());
        assert!(CompletionRequest::new("m", vec![ChatMessage::user("u")], 0.0, 10, "t").is_err());
        assert!(CompletionRequest::new(
            "m",
            vec![ChatMessage::system(""), ChatMessage::user("u")],
            0.0,
            10,
            "t"
        )
        .is_err());
    }
}
