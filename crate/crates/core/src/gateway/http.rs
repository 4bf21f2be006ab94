//! Chat-completions client for hosted providers.

use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{BackendReply, BackendRequest, ChatBackend, ChatMessage, GatewayError, Usage};
use crate::memory::RoleTag;

/// Minimal POST-JSON transport so the retry policy can be exercised without
/// a network.
pub trait HttpTransport: Send + Sync {
    /// Returns `(status, body)`; `Err` means the request never completed.
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<(u16, String), String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<(u16, String), String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    pub vision_model: String,
    pub temperature: f64,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub backoff: Duration,
}

pub struct HttpBackend {
    settings: HttpSettings,
    transport: Box<dyn HttpTransport>,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings, transport: Box<dyn HttpTransport>) -> Self {
        Self { settings, transport }
    }

    fn endpoint(&self) -> String {
        let base = self.settings.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn body(&self, messages: &[ChatMessage], vision: bool) -> Value {
        let model = if vision { &self.settings.vision_model } else { &self.settings.model };
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    RoleTag::System => "system",
                    RoleTag::User => "user",
                    RoleTag::Assistant => "assistant",
                };
                if m.images.is_empty() {
                    json!({ "role": role, "content": m.content })
                } else {
                    let mut parts = vec![json!({ "type": "text", "text": m.content })];
                    parts.extend(m.images.iter().map(|img| {
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{};base64,{}", img.media_type, img.data_base64) }
                        })
                    }));
                    json!({ "role": role, "content": parts })
                }
            })
            .collect();
        json!({ "model": model, "temperature": self.settings.temperature, "messages": messages })
    }
}

fn parse_reply(body: &str) -> Result<BackendReply, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::InvalidResponse("no choices[0].message.content".into()))?
        .to_string();
    let usage = v.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
    });
    Ok(BackendReply { text, usage })
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn is_live(&self) -> bool {
        true
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, GatewayError> {
        let url = self.endpoint();
        let body = self.body(request.messages, request.vision);
        let attempts = self.settings.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.transport.post_json(&url, self.settings.api_key.as_deref(), &body) {
                Ok((status, text)) if (200..300).contains(&status) => return parse_reply(&text),
                Ok((status, text)) if status >= 500 || status == 429 => {
                    last = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
                }
                Ok((status, text)) => return Err(GatewayError::Http { status, body: text }),
                Err(e) => last = e,
            }
            warn!(attempt, key = %request.key, error = %last, "chat request failed");
            if attempt < attempts {
                std::thread::sleep(self.settings.backoff * 2u32.pow(attempt - 1));
            }
        }
        Err(GatewayError::Transport { attempts, message: last })
    }
}
