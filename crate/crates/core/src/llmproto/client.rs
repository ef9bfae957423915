/// One failed chat call. Only `Transport` and 5xx `Http` are worth retrying.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    Http { status: u16, body: String },
    Transport(String),
    /// 2xx reply whose JSON lacks `choices[0].message.content`.
    Protocol(String),
}

impl CallError {
    pub fn retryable(&self) -> bool {
        match self {
            CallError::Transport(_) => true,
            CallError::Http { status, .. } => *status >= 500,
            CallError::Protocol(_) => false,
        }
    }
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Http { status, body } => write!(f, "HTTP {status}: {body}"),
            CallError::Transport(m) => write!(f, "transport: {m}"),
            CallError::Protocol(m) => write!(f, "protocol: {m}"),
        }
    }
}

/// Sends one user message and returns the assistant's text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, CallError>;
}

#[cfg(feature = "http")]
pub use http::HttpChatBackend;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::{CallError, ChatBackend};
    use crate::llmproto::run::LlmEndpointConfig;

    pub struct HttpChatBackend {
        agent: ureq::Agent,
        url: String,
        model: String,
    }

    impl HttpChatBackend {
        pub fn new(cfg: &LlmEndpointConfig) -> crate::Result<Self> {
            cfg.validate()?;
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
                .http_status_as_error(false)
                .build()
                .into();
            Ok(Self {
                agent,
                url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
                model: cfg.model.clone(),
            })
        }

        pub fn request_body(model: &str, prompt: &str) -> Value {
            json!({
                "model": model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            })
        }
    }

    fn reply_content(v: &Value) -> Option<String> {
        v.get("choices")?.get(0)?.get("message")?.get("content")?.as_str().map(str::to_string)
    }

    impl ChatBackend for HttpChatBackend {
        fn complete(&self, prompt: &str) -> std::result::Result<String, CallError> {
            let transport = |e: ureq::Error| CallError::Transport(e.to_string());
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(Self::request_body(&self.model, prompt))
                .map_err(transport)?;
            let status = resp.status().as_u16();
            let body = resp.body_mut().read_to_string().map_err(transport)?;
            if !(200..300).contains(&status) {
                return Err(CallError::Http { status, body });
            }
            let v: Value = serde_json::from_str(&body).map_err(|e| CallError::Protocol(format!("{e}: {body}")))?;
            reply_content(&v).ok_or_else(|| CallError::Protocol(format!("no choices[0].message.content in {body}")))
        }
    }

}
