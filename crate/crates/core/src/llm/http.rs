use std::time::Duration;

use serde_json::json;

use super::{LlmError, LlmRequest, Provider, ProviderReply, TokenUsage};
use crate::corpus::SecretRef;
use crate::net::{excerpt, post_json, HttpError};

/// Chat-completions endpoint at `{api_base}/chat/completions`.
pub struct HttpProvider {
    pub api_base: String,
    pub api_key: SecretRef,
    pub timeout: Duration,
}

impl HttpProvider {
    pub fn new(api_base: impl Into<String>, api_key: SecretRef, timeout: Duration) -> Self {
        Self {
            api_base: api_base.into(),
            api_key,
            timeout,
        }
    }
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Status { status, excerpt } => LlmError::Provider {
                status: Some(status),
                excerpt,
            },
            HttpError::Timeout => LlmError::Timeout,
            HttpError::Transport(m) => LlmError::Provider {
                status: None,
                excerpt: m,
            },
            // a 2xx with an unreadable body will not improve on retry
            HttpError::Decode(m) => LlmError::Provider {
                status: Some(200),
                excerpt: m,
            },
        }
    }
}

pub(crate) fn parse_chat_response(v: &serde_json::Value) -> Result<ProviderReply, LlmError> {
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Provider {
            status: Some(200),
            excerpt: excerpt(&format!("no message content in {v}")),
        })?
        .to_string();
    let usage = v.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(ProviderReply { text, usage })
}

impl Provider for HttpProvider {
    fn complete(&self, request: &LlmRequest) -> Result<ProviderReply, LlmError> {
        let key = self.api_key.resolve().ok_or(LlmError::MissingKey)?;
        let url = format!("{}/chat/completions", self.api_base.trim_end_matches('/'));
        let body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [{ "role": "user", "content": request.prompt_text }],
        });
        let resp = post_json(&url, Some(&key), &body, self.timeout)?;
        parse_chat_response(&resp)
    }

    fn is_remote(&self) -> bool {
        true
    }
}
