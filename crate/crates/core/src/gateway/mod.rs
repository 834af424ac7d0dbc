//! Uniform interfaces to the four external models: the reasoner LLM, the video
//! generator, the video captioner and the video evaluator.
//!
//! Three adapter kinds exist for each role. `http_chat` speaks the
//! messages-array chat JSON for the reasoner and a plain JSON request/response
//! contract for the other roles. `subprocess` writes one JSON request object to
//! a child process's stdin and reads one JSON response object from its stdout.
//! `mock` answers from a [`MockScript`] and never touches the network.

mod config;
mod http;
mod mock;
mod retry;
mod subprocess;
mod wire;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use thiserror::Error;

use crate::domain::{PromptText, ScorePair, VideoParams, VideoRef};
use crate::prompt_kit::ReasonerRequest;

pub use config::{BackendConfig, BackendKind, GatewayConfig};
pub use http::{HttpCaptioner, HttpEvaluator, HttpGenerator, HttpReasoner};
pub use mock::{
    FailureRule, FixedScoreRule, KeywordBonus, MockBackend, MockCounts, MockEvaluatorFn,
    MockOp, MockScript, ScriptedResponse, TranscriptEvent,
};
pub use retry::{with_retries, CallStats, RateLimiter, RetryPolicy};
pub use subprocess::SubprocessBackend;
pub use wire::{ChatMessage, ChatRequest, WireRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out after {0:.1} s")]
    Timeout(f64),
    #[error("video generation failed{}: {diagnostic}", status.map(|s| format!(" (exit status {s})")).unwrap_or_default())]
    Generation {
        status: Option<i32>,
        diagnostic: String,
    },
    #[error("captioning failed: {0}")]
    Caption(String),
    #[error("video not found: {0}")]
    MissingVideo(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("backend protocol violation: {0}")]
    Protocol(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    /// Transport failures and timeouts are worth retrying; everything else
    /// would fail the same way again.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Timeout(_))
    }
}

/// Who is calling: lets adapters name artifacts and lets mocks key their
/// scripts. `current_prompt` is the round prompt being refined.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CallContext {
    pub session_id: String,
    pub round: u32,
    pub current_prompt: String,
    pub video_dir: Option<PathBuf>,
}

impl CallContext {
    pub fn new(session_id: impl Into<String>, round: u32) -> Self {
        Self {
            session_id: session_id.into(),
            round,
            ..Default::default()
        }
    }
}

#[async_trait]
pub trait Reasoner: Send + Sync {
    async fn reason(
        &self,
        ctx: &CallContext,
        request: &ReasonerRequest,
    ) -> Result<String, GatewayError>;
}

#[async_trait]
pub trait VideoGenerator: Send + Sync {
    async fn generate_video(
        &self,
        ctx: &CallContext,
        prompt: &PromptText,
        params: &VideoParams,
    ) -> Result<VideoRef, GatewayError>;
}

#[async_trait]
pub trait Captioner: Send + Sync {
    async fn caption(&self, ctx: &CallContext, video: &VideoRef) -> Result<String, GatewayError>;
}

#[async_trait]
pub trait Evaluator: Send + Sync {
    async fn evaluate(
        &self,
        ctx: &CallContext,
        video: &VideoRef,
        prompt: &PromptText,
    ) -> Result<ScorePair, GatewayError>;
}

/// The four backends one refinement run talks to. Cheap to clone and safe
/// to share across concurrent sessions.
#[derive(Clone)]
pub struct Gateways {
    pub reasoner: Arc<dyn Reasoner>,
    pub generator: Arc<dyn VideoGenerator>,
    pub captioner: Arc<dyn Captioner>,
    pub evaluator: Arc<dyn Evaluator>,
}

impl Gateways {
    /// All four roles served by one mock backend.
    pub fn mock(backend: Arc<MockBackend>) -> Self {
        Self {
            reasoner: backend.clone(),
            generator: backend.clone(),
            captioner: backend.clone(),
            evaluator: backend,
        }
    }
}

/// Local paths must exist; URIs (anything with a scheme) are passed through.
pub(crate) fn ensure_video_exists(video: &VideoRef) -> Result<(), GatewayError> {
    if video.locator.contains("://") || Path::new(&video.locator).exists() {
        Ok(())
    } else {
        Err(GatewayError::MissingVideo(video.locator.clone()))
    }
}

/// Remote scores are validated, never clamped.
pub(crate) fn checked_scores(pc: f64, sa: f64) -> Result<ScorePair, GatewayError> {
    ScorePair::new(pc, sa)
        .map_err(|e| GatewayError::Evaluation(format!("evaluator returned invalid scores: {e}")))
}
