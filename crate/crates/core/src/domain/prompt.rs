use std::fmt;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Counts whitespace-delimited tokens. Every word limit in the crate goes
/// through this function so the engine, parsers and tests agree.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the first `limit` whitespace tokens of `text`, joined by single spaces.
/// Returns the input unchanged when it is already within the limit.
pub fn truncate_words(text: &str, limit: usize) -> (String, bool) {
    if word_count(text) <= limit {
        return (text.to_string(), false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(limit).collect();
    (kept.join(" "), true)
}

/// A non-empty prompt together with its word count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPrompt", into = "RawPrompt")]
pub struct PromptText {
    text: String,
    word_count: usize,
}

#[derive(Serialize, Deserialize)]
struct RawPrompt {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word_count: Option<usize>,
}

impl PromptText {
    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyPrompt);
        }
        let word_count = word_count(&text);
        Ok(Self { text, word_count })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.text.contains(needle)
    }
}

impl TryFrom<RawPrompt> for PromptText {
    type Error = DomainError;

    fn try_from(raw: RawPrompt) -> Result<Self, Self::Error> {
        let prompt = PromptText::new(raw.text)?;
        match raw.word_count {
            Some(n) if n != prompt.word_count => Err(DomainError::WordCountMismatch {
                stated: n,
                actual: prompt.word_count,
            }),
            _ => Ok(prompt),
        }
    }
}

impl From<PromptText> for RawPrompt {
    fn from(p: PromptText) -> Self {
        RawPrompt {
            text: p.text,
            word_count: Some(p.word_count),
        }
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl AsRef<str> for PromptText {
    fn as_ref(&self) -> &str {
        &self.text
    }
}
