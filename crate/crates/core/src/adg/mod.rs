//! Attribute-oriented description generation.
//!
//! A vision-language chat model is walked through a fixed multi-turn script
//! (text presence, text content, then style/role/action) and its final reply
//! is parsed into four attribute descriptions. Records are cached by sticker
//! id so training never touches the network, and a text encoder turns the four
//! strings into the vectors that seed the classifier's soft prompts.

mod cache;
mod client;
mod prompt;
mod text_encoder;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::StickerImage;
use crate::{Error, Result};

pub use cache::DescriptionCache;
pub use client::{build_request_body, ChatClient, ChatMessage, ChatRole, HttpChatClient, StubChatClient};
pub use prompt::{build_prompt_turns, prompt_hash, Turn, SYSTEM_PROMPT};
pub use text_encoder::{encode_descriptions, DescriptionEmbeddings, TextEncoder, TextEncoderConfig};

pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDescriptions {
    pub id: String,
    pub content: String,
    pub style: String,
    pub role: String,
    pub action: String,
    pub source_model: String,
    pub prompt_hash: String,
    /// Set when the reply could not be parsed into four labeled fields.
    #[serde(default)]
    pub fallback: bool,
}

impl AttributeDescriptions {
    /// The four texts in prompt-slot order: content, style, role, action.
    pub fn fields(&self) -> [&str; 4] {
        [&self.content, &self.style, &self.role, &self.action]
    }
}

/// Splits a reply into `(content, style, role, action, fallback)`.
///
/// Lines of the form `Content: ...` (case-insensitive, optional list markers
/// or bold) fill the matching field. With no labels at all the whole reply
/// becomes the content and the other fields are `"unknown"`; any missing or
/// empty field is also `"unknown"`. Either case sets the fallback flag.
pub fn parse_reply(reply: &str) -> ([String; 4], bool) {
    const LABELS: [&str; 4] = ["content", "style", "role", "action"];
    let mut fields: [Option<String>; 4] = Default::default();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•', ' ']).trim();
        let Some((label, value)) = line.split_once(':') else {
            continue;
        };
        let label = label.trim().trim_matches('*').trim().to_ascii_lowercase();
        if let Some(slot) = LABELS.iter().position(|l| *l == label) {
            let value = value.trim().trim_matches('*').trim();
            if fields[slot].is_none() && !value.is_empty() {
                fields[slot] = Some(value.to_string());
            }
        }
    }
    if fields.iter().all(Option::is_none) {
        let body = reply.trim();
        let content = if body.is_empty() { UNKNOWN.to_string() } else { body.to_string() };
        return ([content, UNKNOWN.into(), UNKNOWN.into(), UNKNOWN.into()], true);
    }
    let fallback = fields.iter().any(Option::is_none);
    (fields.map(|f| f.unwrap_or_else(|| UNKNOWN.to_string())), fallback)
}

#[derive(Debug, Clone, Copy)]
pub struct DescribeOptions {
    /// Attempts per chat request before giving up.
    pub retries: usize,
}

impl Default for DescribeOptions {
    fn default() -> Self {
        Self { retries: 3 }
    }
}

/// Describes one sticker, answering from the cache when possible.
pub fn describe(
    sticker: &StickerImage,
    client: &dyn ChatClient,
    cache: &DescriptionCache,
    opts: DescribeOptions,
) -> Result<AttributeDescriptions> {
    if let Some(hit) = cache.get(&sticker.id) {
        return Ok(hit);
    }
    let record = generate(sticker, client, opts)?;
    cache.insert(record.clone())?;
    Ok(record)
}

/// Runs the full turn sequence against the client without touching a cache.
pub fn generate(sticker: &StickerImage, client: &dyn ChatClient, opts: DescribeOptions) -> Result<AttributeDescriptions> {
    let turns = build_prompt_turns();
    let mut messages = Vec::with_capacity(turns.len() * 2);
    let mut last = String::new();
    for turn in &turns {
        messages.push(ChatMessage {
            role: turn.role,
            text: turn.text.clone(),
        });
        if turn.role == ChatRole::System {
            continue;
        }
        last = request_with_retries(sticker, client, &messages, opts.retries)?;
        messages.push(ChatMessage {
            role: ChatRole::Assistant,
            text: last.clone(),
        });
    }
    let ([content, style, role, action], fallback) = parse_reply(&last);
    Ok(AttributeDescriptions {
        id: sticker.id.clone(),
        content,
        style,
        role,
        action,
        source_model: client.model_name().to_string(),
        prompt_hash: prompt_hash(&turns),
        fallback,
    })
}

fn request_with_retries(
    sticker: &StickerImage,
    client: &dyn ChatClient,
    messages: &[ChatMessage],
    retries: usize,
) -> Result<String> {
    let attempts = retries.max(1);
    let mut last_err = String::new();
    for attempt in 0..attempts {
        match client.chat(sticker, messages) {
            Ok(reply) => return Ok(reply),
            Err(e) => {
                log::warn!("chat attempt {} for {} failed: {e}", attempt + 1, sticker.id);
                last_err = e.to_string();
            }
        }
    }
    Err(Error::Transport {
        id: sticker.id.clone(),
        attempts,
        message: last_err,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DescribeSummary {
    pub cached: usize,
    pub generated: usize,
    pub fallbacks: usize,
}

/// Describes every sticker, running up to `parallelism` requests at a time.
/// New records are appended to the cache in input order.
pub fn describe_all(
    stickers: &[&StickerImage],
    client: &dyn ChatClient,
    cache: &DescriptionCache,
    opts: DescribeOptions,
    parallelism: usize,
) -> Result<DescribeSummary> {
    let mut summary = DescribeSummary::default();
    let pending: Vec<&StickerImage> = stickers
        .iter()
        .copied()
        .filter(|s| {
            let hit = cache.contains(&s.id);
            summary.cached += hit as usize;
            !hit
        })
        .collect();
    for chunk in pending.chunks(parallelism.max(1)) {
        let results: Vec<Mutex<Option<Result<AttributeDescriptions>>>> = chunk.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for (sticker, slot) in chunk.iter().zip(&results) {
                scope.spawn(move || {
                    *slot.lock().unwrap() = Some(generate(sticker, client, opts));
                });
            }
        });
        for slot in results {
            let record = slot.into_inner().unwrap().expect("worker finished")?;
            summary.fallbacks += record.fallback as usize;
            summary.generated += 1;
            cache.insert(record)?;
        }
    }
    Ok(summary)
}
