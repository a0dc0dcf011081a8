//! Backend interfaces: chat completion, image generation and zero-shot
//! subgroup classification. Implementations live in [`crate::synth`] and in
//! the HTTP clients of the std companion crate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_token, Label, SocialDimension, Subgroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn single(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            messages: alloc::vec![ChatMessage::user(user)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("scripted provider exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("request rejected: {0}")]
    InvalidRequest(String),
}

/// A chat-completion backend. Implementations must tolerate concurrent use.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("backend returned {got} of {requested} images")]
    PartialBatch { got: usize, requested: usize },
    #[error("image {0} carries no subgroup signature")]
    MissingSignature(String),
    #[error("confusion matrix has no row for {0}")]
    RowMissing(Subgroup),
    #[error("no distribution matches the prompt and no default is set")]
    NoDefaultDistribution,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lora {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    pub n: usize,
    pub seed: u64,
    /// Index of the first image in this request within its batch.
    #[serde(default)]
    pub first_index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lora: Vec<Lora>,
}

/// One generated image plus generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Opaque handle: a file name, path or URL.
    pub handle: String,
    pub model: String,
    pub prompt: String,
    pub seed: u64,
    pub index: usize,
    /// Ground-truth subgroup embedded by simulated generators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Label>,
}

pub trait ImageBackend: Send + Sync {
    /// Generates up to `request.n` images. Returning fewer is allowed; the
    /// caller asks again for the remainder.
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError>;
}

/// Raw classifier output for one image before taxonomy validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLabel {
    pub label: String,
    pub confidence: f64,
}

pub trait Classifier: Send + Sync {
    /// Returns one raw label per image, in input order.
    fn classify(
        &self,
        images: &[ImageRecord],
        dimension: SocialDimension,
        candidates: &[Subgroup],
    ) -> Result<Vec<RawLabel>, BackendError>;
}

/// A named generation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub id: String,
    pub base: String,
    pub style: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub lora: Vec<Lora>,
}

/// Known generation targets and the spellings users write them in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelCatalog {
    pub models: Vec<TargetModel>,
}

fn target(id: &str, base: &str, style: &str, aliases: &[&str]) -> TargetModel {
    TargetModel {
        id: id.to_string(),
        base: base.to_string(),
        style: style.to_string(),
        aliases: aliases.iter().map(|a| a.to_string()).collect(),
        lora: Vec::new(),
    }
}

impl ModelCatalog {
    /// Stable Diffusion variants, SDXL, community checkpoints per style, a
    /// commercial product and a mock target for smoke tests.
    pub fn builtin() -> Self {
        let mut models = alloc::vec![
            target("SD", "sd-1.5", "base", &["sd", "stable diffusion", "sd1.5", "sd 1.5", "sd-1.5", "stable diffusion 1.5"]),
            target("SD-2.1", "sd-2.1", "base", &["sd2.1", "sd 2.1", "stable diffusion 2.1"]),
            target("SD-XL", "sdxl-1.0", "base", &["sdxl", "sd xl", "sd-xl", "stable diffusion xl"]),
            target("Midjourney", "commercial", "commercial", &["midjourney", "midjurney"]),
            target("ChilloutMix", "sd-1.5", "anime", &["chilloutmix", "chillout mix"]),
            target("Realistic Vision", "sd-1.5", "realism", &["realistic vision", "realisticvision"]),
            target("DreamShaper", "sd-1.5", "artistic", &["dreamshaper", "dream shaper"]),
            target("SDVN3", "sd-1.5", "realism", &["sdvn3", "sdvn", "sdvn realart", "sdvn-realart"]),
            target("mock", "synthetic", "synthetic", &["mock", "mock model"]),
        ];
        let mut with_lora = target("SD+FilmGrain", "sd-1.5", "realism", &["sd with film grain lora", "filmgrain lora"]);
        with_lora.lora.push(Lora {
            name: "film-grain".to_string(),
            weight: 0.8,
        });
        models.push(with_lora);
        Self { models }
    }

    pub fn get(&self, id: &str) -> Option<&TargetModel> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Maps a user spelling onto a catalog id.
    pub fn canonical_id(&self, raw: &str) -> Option<&str> {
        let key = normalize_token(raw);
        self.models
            .iter()
            .find(|m| normalize_token(&m.id) == key || m.aliases.iter().any(|a| normalize_token(a) == key))
            .map(|m| m.id.as_str())
    }

    /// Finds the longest alias mentioned as a whole phrase in `text`.
    pub fn find_in(&self, text: &str) -> Option<&str> {
        let hay = normalize_token(text);
        let mut best: Option<(&str, usize)> = None;
        for m in &self.models {
            let spellings = core::iter::once(m.id.as_str()).chain(m.aliases.iter().map(String::as_str));
            for spelling in spellings {
                let needle = normalize_token(spelling);
                if needle.is_empty() || !contains_phrase(&hay, &needle) {
                    continue;
                }
                if best.is_none_or(|(_, len)| needle.len() > len) {
                    best = Some((m.id.as_str(), needle.len()));
                }
            }
        }
        best.map(|(id, _)| id)
    }
}

/// Whole-word containment on normalized text.
pub(crate) fn contains_phrase(hay: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric() || c == '.';
    let mut from = 0;
    while let Some(rel) = hay[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !is_word(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word(c));
        if before_ok && after_ok {
            return true;
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_aliases() {
        let catalog = ModelCatalog::builtin();
        assert_eq!(catalog.canonical_id("SDXL"), Some("SD-XL"));
        assert_eq!(catalog.canonical_id("sd-xl"), Some("SD-XL"));
        assert_eq!(catalog.canonical_id("Midjurney"), Some("Midjourney"));
        assert_eq!(catalog.canonical_id("unknown-model"), None);
    }

    #[test]
    fn finds_longest_mention() {
        let catalog = ModelCatalog::builtin();
        assert_eq!(
            catalog.find_in("Can you tell me whether SDXL model exhibits racial stereotypes?"),
            Some("SD-XL")
        );
        assert_eq!(
            catalog.find_in("Is Chilloutmix model racially stereotyped?"),
            Some("ChilloutMix")
        );
        assert_eq!(catalog.find_in("Does stable diffusion xl do this?"), Some("SD-XL"));
        assert_eq!(catalog.find_in("Is this biased?"), None);
    }

    #[test]
    fn phrase_boundaries() {
        assert!(contains_phrase("the sd model", "sd"));
        assert!(!contains_phrase("the sdxl model", "sd"));
        assert!(!contains_phrase("misdone", "sd"));
    }
}
