use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::StickerImage;
use crate::{Error, Result};

/// Environment variable holding the chat endpoint base URL.
pub const ENDPOINT_ENV: &str = "STICKERTAG_CHAT_URL";
/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "STICKERTAG_CHAT_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
}

/// A vision chat service. `messages` is the whole conversation so far and
/// ends with a user turn; the sticker image accompanies the first user turn.
pub trait ChatClient: Send + Sync {
    fn model_name(&self) -> &str;
    fn chat(&self, sticker: &StickerImage, messages: &[ChatMessage]) -> Result<String>;
}

/// Offline client that answers from the sticker meta. Synthetic stickers
/// carry `shape`, `color` and `action`; the reply uses `content`/`text`,
/// `style`/`color`, `role`/`shape` and `action` keys, in that preference.
#[derive(Debug, Default)]
pub struct StubChatClient {
    calls: AtomicUsize,
}

impl StubChatClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for StubChatClient {
    fn model_name(&self) -> &str {
        "stub"
    }

    fn chat(&self, sticker: &StickerImage, messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let meta = |keys: &[&str]| {
            keys.iter()
                .find_map(|k| sticker.meta.get(*k))
                .cloned()
                .unwrap_or_else(|| "none".to_string())
        };
        let text = sticker.meta.get("content").or_else(|| sticker.meta.get("text"));
        let user_turns = messages.iter().filter(|m| m.role == ChatRole::User).count();
        Ok(match user_turns {
            1 => if text.is_some() { "Yes." } else { "No." }.to_string(),
            2 => text.cloned().unwrap_or_else(|| "none".to_string()),
            _ => format!(
                "Content: {}\nStyle: {}\nRole: {}\nAction: {}",
                meta(&["content", "text"]),
                meta(&["style", "color"]),
                meta(&["role", "shape"]),
                meta(&["action"]),
            ),
        })
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint that accepts
/// images as base64 data URLs.
pub struct HttpChatClient {
    base_url: String,
    model: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            token,
            agent,
        }
    }

    /// Reads the base URL from `STICKERTAG_CHAT_URL` and the optional token
    /// from `STICKERTAG_CHAT_TOKEN`.
    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let base = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|v| !v.is_empty());
        Ok(Self::new(base, model, token, Duration::from_secs(120)))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

/// Base64 PNG encoding of a sticker.
pub fn encode_png_base64(sticker: &StickerImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    sticker
        .to_rgb8()
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            id: sticker.id.clone(),
            message: e.to_string(),
        })?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// Request body in the chat-completions layout, with the image attached to
/// the first user message.
pub fn build_request_body(model: &str, image_b64: &str, messages: &[ChatMessage]) -> Value {
    let mut image_sent = false;
    let msgs: Vec<Value> = messages
        .iter()
        .map(|m| {
            if m.role == ChatRole::User && !image_sent {
                image_sent = true;
                json!({
                    "role": "user",
                    "content": [
                        {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image_b64}")}},
                        {"type": "text", "text": m.text},
                    ]
                })
            } else {
                json!({"role": m.role.as_str(), "content": m.text})
            }
        })
        .collect();
    json!({"model": model, "messages": msgs, "temperature": 0})
}

fn reply_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        _ => None,
    }
}

impl ChatClient for HttpChatClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn chat(&self, sticker: &StickerImage, messages: &[ChatMessage]) -> Result<String> {
        let body = build_request_body(&self.model, &encode_png_base64(sticker)?, messages);
        let mut req = self.agent.post(&self.endpoint());
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let transport = |message: String| Error::Transport {
            id: sticker.id.clone(),
            attempts: 1,
            message,
        };
        let mut resp = req.send_json(&body).map_err(|e| transport(e.to_string()))?;
        let value: Value = resp.body_mut().read_json().map_err(|e| transport(e.to_string()))?;
        reply_text(&value).ok_or_else(|| transport(format!("response has no message content: {value}")))
    }
}
