//! Chat-completion access with retries, usage accounting and a concurrency
//! cap, over pluggable providers.

mod http;
mod mock;

use std::ops::{Add, AddAssign};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::prompt::PromptTask;

pub use http::HttpProvider;
pub use mock::{truth_labels, MockBehavior, MockProvider, MockRule, MockScript};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub prompt_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_attempts: u32,
}

impl LlmRequest {
    pub fn new(prompt_text: impl Into<String>, model_id: impl Into<String>, temperature: f64, max_attempts: u32) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            model_id: model_id.into(),
            temperature,
            max_attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Rough count for providers that report nothing: one token per four
    /// characters.
    pub fn estimate(prompt: &str, completion: &str) -> Self {
        Self {
            prompt_tokens: prompt.chars().count().div_ceil(4) as u64,
            completion_tokens: completion.chars().count().div_ceil(4) as u64,
        }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, o: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + o.prompt_tokens,
            completion_tokens: self.completion_tokens + o.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, o: TokenUsage) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    /// Seconds spent in the successful attempt.
    pub latency: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("provider error{}: {excerpt}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, excerpt: String },
    #[error("request timed out")]
    Timeout,
    #[error("no mock rule matches prompt starting `{0}`")]
    UnmatchedPrompt(String),
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("no API key configured")]
    MissingKey,
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Provider { status: Some(s), .. } => *s == 429 || *s >= 500,
            LlmError::Provider { status: None, .. } | LlmError::Timeout => true,
            _ => false,
        }
    }
}

/// What a provider returns for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<ProviderReply, LlmError>;

    /// Whether calls leave the process.
    fn is_remote(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GatewayStats {
    /// Successful completions.
    pub calls: u64,
    /// Provider attempts, including failed ones.
    pub attempts: u64,
    pub failures: u64,
    pub usage: TokenUsage,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub task: Option<PromptTask>,
    pub prompt: String,
    pub response: String,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_BACKOFF: Duration = Duration::from_secs(1);

/// Thread-safe front door to a provider.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    permits: Permits,
    backoff: Duration,
    stats: Mutex<GatewayStats>,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, concurrency: usize) -> Self {
        Self {
            provider,
            permits: Permits {
                free: Mutex::new(concurrency.max(1)),
                cv: Condvar::new(),
            },
            backoff: DEFAULT_BACKOFF,
            stats: Mutex::new(GatewayStats::default()),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Base delay before the first retry; doubles per further retry.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn is_remote(&self) -> bool {
        self.provider.is_remote()
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        if request.prompt_text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let _permit = self.permits.acquire();
        let max = request.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = self.provider.complete(request);
            let latency = started.elapsed().as_secs_f64();
            let mut stats = self.stats.lock().unwrap();
            stats.attempts += 1;
            match result {
                Ok(reply) => {
                    let usage = reply
                        .usage
                        .unwrap_or_else(|| TokenUsage::estimate(&request.prompt_text, &reply.text));
                    stats.calls += 1;
                    stats.usage += usage;
                    stats.latency_secs += latency;
                    drop(stats);
                    self.transcript.lock().unwrap().push(TranscriptEntry {
                        task: PromptTask::of(&request.prompt_text),
                        prompt: request.prompt_text.clone(),
                        response: reply.text.clone(),
                    });
                    return Ok(LlmResponse {
                        text: reply.text,
                        token_usage: usage,
                        latency,
                        attempts: attempt,
                    });
                }
                Err(e) if e.is_transient() && attempt < max => {
                    drop(stats);
                    let delay = self.backoff * 2u32.saturating_pow(attempt - 1);
                    log::warn!("attempt {attempt}/{max} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(e) => {
                    stats.failures += 1;
                    return Err(e);
                }
            }
        }
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }
}
