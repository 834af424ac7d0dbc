use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{checked_scores, GatewayError};
use crate::domain::{ScorePair, VideoParams, VideoRef};
use crate::prompt_kit::{ReasonerRequest, Step};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completions POST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn from_request(model: Option<&str>, request: &ReasonerRequest) -> Self {
        Self {
            model: model.map(str::to_string),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: request.system_part.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: request.user_part.clone(),
                },
            ],
        }
    }
}

/// `choices[0].message.content` of a chat-completions response.
pub(crate) fn chat_content(body: &Value) -> Result<String, GatewayError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol("response lacks choices[0].message.content".into()))
}

/// One request object of the JSON request/response contract used by the
/// subprocess adapters and the non-chat HTTP adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRequest {
    Reason {
        session_id: String,
        round: u32,
        step: Step,
        system: String,
        user: String,
    },
    GenerateVideo {
        session_id: String,
        round: u32,
        prompt: String,
        params: VideoParams,
        #[serde(skip_serializing_if = "Option::is_none")]
        output_dir: Option<String>,
    },
    Caption {
        session_id: String,
        round: u32,
        video: VideoRef,
    },
    Evaluate {
        session_id: String,
        round: u32,
        video: VideoRef,
        prompt: String,
    },
}

fn backend_error(body: &Value) -> Option<String> {
    body.get("error").map(|e| match e {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    })
}

pub(crate) fn reason_response(body: &Value) -> Result<String, GatewayError> {
    if let Some(e) = backend_error(body) {
        return Err(GatewayError::Protocol(e));
    }
    body.get("content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol("response lacks \"content\"".into()))
}

pub(crate) fn video_response(body: &Value) -> Result<VideoRef, GatewayError> {
    let fail = |diagnostic: String| GatewayError::Generation {
        status: None,
        diagnostic,
    };
    if let Some(e) = backend_error(body) {
        return Err(fail(e));
    }
    serde_json::from_value(body.clone()).map_err(|e| fail(format!("bad video reference: {e}")))
}

pub(crate) fn caption_response(body: &Value) -> Result<String, GatewayError> {
    if let Some(e) = backend_error(body) {
        return Err(GatewayError::Caption(e));
    }
    match body.get("caption").and_then(Value::as_str) {
        Some(c) if !c.trim().is_empty() => Ok(c.to_string()),
        Some(_) => Err(GatewayError::Caption("backend returned an empty caption".into())),
        None => Err(GatewayError::Caption("response lacks \"caption\"".into())),
    }
}

pub(crate) fn scores_response(body: &Value) -> Result<ScorePair, GatewayError> {
    if let Some(e) = backend_error(body) {
        return Err(GatewayError::Evaluation(e));
    }
    let metric = |key: &str| {
        body.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| GatewayError::Evaluation(format!("response lacks numeric \"{key}\"")))
    };
    checked_scores(metric("pc")?, metric("sa")?)
}
