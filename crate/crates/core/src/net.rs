//! Shared HTTP plumbing and a process-wide request counter.
//!
//! Every outbound request goes through [`post_json`], so tests can assert
//! that mock runs never touch the network.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

static REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Outbound HTTP requests issued by this process so far.
pub fn network_requests() -> u64 {
    REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("HTTP {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Decode(String),
}

impl HttpError {
    /// Client errors other than rate limiting are not worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Transport(_) | HttpError::Timeout => true,
            HttpError::Decode(_) => false,
        }
    }
}

pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

pub(crate) fn post_json(
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    timeout: Duration,
) -> Result<serde_json::Value, HttpError> {
    REQUESTS.fetch_add(1, Ordering::SeqCst);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = bearer {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => HttpError::Timeout,
        other => HttpError::Transport(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| HttpError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(HttpError::Status {
            status,
            excerpt: excerpt(&text),
        });
    }
    serde_json::from_str(&text).map_err(|e| HttpError::Decode(format!("{e}: {}", excerpt(&text))))
}
