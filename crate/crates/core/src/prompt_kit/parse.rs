use serde_json::{Map, Value};

use super::PromptError;
use crate::domain::{
    truncate_words, Mismatch, MismatchReport, PromptText, RefinementPolicy, RuleAnalysis,
};

/// Contents of the ``` fenced blocks in `text`, in order. The language tag on
/// the opening fence line is dropped.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// End index (exclusive) of the balanced `{...}` starting at `start`, honouring
/// JSON string literals.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_object_in(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(bytes, start) else {
            continue;
        };
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&text[start..end]) {
            return Some(map);
        }
    }
    None
}

/// First syntactically valid JSON object in an LLM completion. Fenced code
/// blocks are searched before the surrounding text.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    fenced_blocks(raw)
        .into_iter()
        .find_map(first_object_in)
        .or_else(|| first_object_in(raw))
}

fn object(raw: &str) -> Result<Map<String, Value>, PromptError> {
    if raw.trim().is_empty() {
        return Err(PromptError::UnparseableOutput);
    }
    extract_json_object(raw).ok_or(PromptError::UnparseableOutput)
}

fn schema(msg: impl Into<String>) -> PromptError {
    PromptError::SchemaMismatch(msg.into())
}

/// A list of non-blank strings; a bare string is accepted as a one-item list.
fn string_list(map: &Map<String, Value>, key: &str) -> Result<Vec<String>, PromptError> {
    let value = map.get(key).ok_or_else(|| schema(format!("missing key \"{key}\"")))?;
    let items: Vec<String> = match value {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| schema(format!("\"{key}\" must contain only strings")))
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(schema(format!("\"{key}\" must be a list of strings"))),
    };
    let items: Vec<String> = items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(schema(format!("\"{key}\" is empty")));
    }
    Ok(items)
}

pub fn parse_step1(raw: &str) -> Result<RuleAnalysis, PromptError> {
    let map = object(raw)?;
    let main_objects = string_list(&map, "main_objects")?;
    let physical_rules = string_list(&map, "physical_rules")?;
    RuleAnalysis::new(main_objects, physical_rules, raw).map_err(|e| schema(e.to_string()))
}

pub fn parse_step2(raw: &str, caption: &str) -> Result<MismatchReport, PromptError> {
    let map = object(raw)?;
    let list = map
        .get("mismatches")
        .ok_or_else(|| schema("missing key \"mismatches\""))?
        .as_array()
        .ok_or_else(|| schema("\"mismatches\" must be a list"))?;
    let mut mismatches = Vec::with_capacity(list.len());
    for (i, item) in list.iter().enumerate() {
        let field = |name: &str| -> Result<String, PromptError> {
            item.get(name)
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| schema(format!("mismatch {i} lacks a non-empty \"{name}\"")))
        };
        mismatches.push(Mismatch {
            aspect: field("aspect")?,
            prompt_said: field("prompt_said")?,
            video_showed: field("video_showed")?,
        });
    }
    Ok(MismatchReport {
        mismatches,
        caption: caption.to_string(),
        raw_reasoner_output: raw.to_string(),
    })
}

/// Step-3 result: the refined prompt and whether it had to be cut to the
/// word limit.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPrompt {
    pub prompt: PromptText,
    pub truncated: bool,
}

pub fn parse_step3(raw: &str, policy: &RefinementPolicy) -> Result<RefinedPrompt, PromptError> {
    let map = object(raw)?;
    let text = map
        .get("refined_prompt")
        .ok_or_else(|| schema("missing key \"refined_prompt\""))?
        .as_str()
        .ok_or_else(|| schema("\"refined_prompt\" must be a string"))?
        .trim();
    let (text, truncated) = truncate_words(text, policy.word_limit);
    let prompt = PromptText::new(text).map_err(|_| schema("\"refined_prompt\" is empty"))?;
    Ok(RefinedPrompt { prompt, truncated })
}
