use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ChatRole;

pub const SYSTEM_PROMPT: &str = "This is a sticker used in conversation. \
Look at the image carefully and answer each question about it briefly and factually.";

const TEXT_PRESENCE: &str = "Please determine if there is text in the sticker.";
const TEXT_CONTENT: &str = "Only give the text content in the sticker without other unrelated words.";
const ATTRIBUTES: &str = "Consider the text in the sticker and provide a brief sentence in English \
to describe the style, role, and action of the sticker. \
Answer with exactly four labeled lines: \"Content: <the text in the sticker, or none>\", \
\"Style: <style>\", \"Role: <role>\", \"Action: <action>\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: ChatRole,
    pub text: String,
}

/// The system turn followed by the three instruction turns. The script does
/// not depend on the sticker; the image travels alongside the messages.
pub fn build_prompt_turns() -> Vec<Turn> {
    [
        (ChatRole::System, SYSTEM_PROMPT),
        (ChatRole::User, TEXT_PRESENCE),
        (ChatRole::User, TEXT_CONTENT),
        (ChatRole::User, ATTRIBUTES),
    ]
    .into_iter()
    .map(|(role, text)| Turn {
        role,
        text: text.to_string(),
    })
    .collect()
}

/// Hex SHA-256 over the role and text of every turn.
pub fn prompt_hash(turns: &[Turn]) -> String {
    let mut hasher = Sha256::new();
    for turn in turns {
        hasher.update(turn.role.as_str().as_bytes());
        hasher.update(b"\t");
        hasher.update(turn.text.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
