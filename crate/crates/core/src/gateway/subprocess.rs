use std::process::Stdio;
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::Value;
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

use super::retry::{with_retries, CallStats, RateLimiter, RetryPolicy};
use super::wire::{self, WireRequest};
use super::{
    ensure_video_exists, BackendConfig, CallContext, Captioner, Evaluator, GatewayError,
    Reasoner, VideoGenerator,
};
use crate::domain::{PromptText, ScorePair, VideoParams, VideoRef};
use crate::prompt_kit::ReasonerRequest;

const MAX_STDERR: usize = 2000;

/// Out-of-process backend. Each call runs `sh -c <endpoint>`, writes one JSON
/// request line to stdin and reads one JSON object from stdout.
pub struct SubprocessBackend {
    cfg: BackendConfig,
    retry: RetryPolicy,
    stats: Arc<CallStats>,
    limiter: Option<RateLimiter>,
}

/// Outcome of one child process run.
enum RunError {
    Spawn(String),
    Timeout,
    Exit { status: Option<i32>, stderr: String },
    BadOutput(String),
}

impl SubprocessBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        Self {
            retry: cfg.retry_policy(),
            limiter: cfg.rate_limit_per_s.map(|r| RateLimiter::new(r, 1)),
            cfg,
            stats: Arc::new(CallStats::default()),
        }
    }

    pub fn stats(&self) -> Arc<CallStats> {
        self.stats.clone()
    }

    async fn run_once(&self, request: &[u8]) -> Result<Value, RunError> {
        if let Some(l) = &self.limiter {
            l.acquire().await;
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.cfg.endpoint)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| RunError::Spawn(e.to_string()))?;

        let mut stdin = child.stdin.take().expect("stdin is piped");
        let input = request.to_vec();
        let writer = tokio::spawn(async move {
            // the child may exit without reading; a broken pipe is not our error
            let _ = stdin.write_all(&input).await;
            let _ = stdin.shutdown().await;
        });

        let output = tokio::time::timeout(self.cfg.timeout(), child.wait_with_output())
            .await
            .map_err(|_| RunError::Timeout)?
            .map_err(|e| RunError::Spawn(e.to_string()))?;
        let _ = writer.await;

        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(RunError::Exit {
                status: output.status.code(),
                stderr: stderr.chars().take(MAX_STDERR).collect::<String>().trim().to_string(),
            });
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let line = stdout
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| RunError::BadOutput("no output on stdout".into()))?;
        serde_json::from_str(line).map_err(|e| RunError::BadOutput(format!("stdout is not JSON: {e}")))
    }

    async fn call(
        &self,
        label: &str,
        request: &WireRequest,
        on_exit: impl Fn(Option<i32>, String) -> GatewayError,
    ) -> Result<Value, GatewayError> {
        let mut line = serde_json::to_vec(request).expect("wire request serializes");
        line.push(b'\n');
        with_retries(label, &self.retry, &self.stats, |_| async {
            self.run_once(&line).await.map_err(|e| match e {
                RunError::Spawn(msg) => GatewayError::Transport(format!("cannot run backend: {msg}")),
                RunError::Timeout => GatewayError::Timeout(self.cfg.timeout_s),
                RunError::Exit { status, stderr } => on_exit(status, stderr),
                RunError::BadOutput(msg) => GatewayError::Protocol(msg),
            })
        })
        .await
    }
}

fn exit_text(status: Option<i32>, stderr: String) -> String {
    let status = status.map(|s| s.to_string()).unwrap_or_else(|| "signal".into());
    if stderr.is_empty() {
        format!("exit status {status}")
    } else {
        format!("exit status {status}: {stderr}")
    }
}

#[async_trait]
impl Reasoner for SubprocessBackend {
    async fn reason(
        &self,
        ctx: &CallContext,
        request: &ReasonerRequest,
    ) -> Result<String, GatewayError> {
        let wire_req = WireRequest::Reason {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            step: request.expected_schema,
            system: request.system_part.clone(),
            user: request.user_part.clone(),
        };
        let body = self
            .call("reasoner", &wire_req, |s, e| GatewayError::Transport(exit_text(s, e)))
            .await?;
        wire::reason_response(&body)
    }
}

#[async_trait]
impl VideoGenerator for SubprocessBackend {
    async fn generate_video(
        &self,
        ctx: &CallContext,
        prompt: &PromptText,
        params: &VideoParams,
    ) -> Result<VideoRef, GatewayError> {
        let wire_req = WireRequest::GenerateVideo {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            prompt: prompt.as_str().to_string(),
            params: *params,
            output_dir: ctx.video_dir.as_deref().map(|p| p.display().to_string()),
        };
        let body = self
            .call("generator", &wire_req, |status, stderr| GatewayError::Generation {
                status,
                diagnostic: if stderr.is_empty() {
                    "backend exited with an error".into()
                } else {
                    stderr
                },
            })
            .await
            .map_err(|e| match e {
                e @ GatewayError::Generation { .. } => e,
                other => GatewayError::Generation {
                    status: None,
                    diagnostic: other.to_string(),
                },
            })?;
        let video = wire::video_response(&body)?;
        ensure_video_exists(&video).map_err(|_| GatewayError::Generation {
            status: None,
            diagnostic: format!("backend reported {} but it does not exist", video.locator),
        })?;
        Ok(video)
    }
}

#[async_trait]
impl Captioner for SubprocessBackend {
    async fn caption(&self, ctx: &CallContext, video: &VideoRef) -> Result<String, GatewayError> {
        ensure_video_exists(video)?;
        let wire_req = WireRequest::Caption {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            video: video.clone(),
        };
        let body = self
            .call("captioner", &wire_req, |s, e| GatewayError::Caption(exit_text(s, e)))
            .await?;
        wire::caption_response(&body)
    }
}

#[async_trait]
impl Evaluator for SubprocessBackend {
    async fn evaluate(
        &self,
        ctx: &CallContext,
        video: &VideoRef,
        prompt: &PromptText,
    ) -> Result<ScorePair, GatewayError> {
        ensure_video_exists(video)?;
        let wire_req = WireRequest::Evaluate {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            video: video.clone(),
            prompt: prompt.as_str().to_string(),
        };
        let body = self
            .call("evaluator", &wire_req, |s, e| GatewayError::Evaluation(exit_text(s, e)))
            .await?;
        wire::scores_response(&body)
    }
}
