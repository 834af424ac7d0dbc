use std::sync::Arc;

use async_trait::async_trait;
use serde_json::Value;

use super::retry::{with_retries, CallStats, RateLimiter, RetryPolicy};
use super::wire::{self, ChatRequest, WireRequest};
use super::{
    ensure_video_exists, BackendConfig, CallContext, Captioner, Evaluator, GatewayError,
    Reasoner, VideoGenerator,
};
use crate::domain::{PromptText, ScorePair, VideoParams, VideoRef};
use crate::prompt_kit::ReasonerRequest;

const MAX_ERROR_BODY: usize = 300;

/// JSON-over-HTTP POST client with bearer auth, retries and rate limiting.
struct HttpClient {
    cfg: BackendConfig,
    client: reqwest::Client,
    retry: RetryPolicy,
    stats: Arc<CallStats>,
    limiter: Option<RateLimiter>,
}

impl HttpClient {
    fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))?;
        let limiter = cfg.rate_limit_per_s.map(|r| RateLimiter::new(r, 1));
        Ok(Self {
            retry: cfg.retry_policy(),
            cfg,
            client,
            stats: Arc::new(CallStats::default()),
            limiter,
        })
    }

    fn token(&self) -> Result<Option<String>, GatewayError> {
        match &self.cfg.auth_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GatewayError::Auth(format!("environment variable {var} is not set"))),
        }
    }

    async fn post(&self, label: &str, body: &Value) -> Result<Value, GatewayError> {
        let token = self.token()?;
        let scrub = |msg: String| match &token {
            Some(t) if !t.is_empty() => msg.replace(t.as_str(), "[redacted]"),
            _ => msg,
        };
        with_retries(label, &self.retry, &self.stats, |_| async {
            if let Some(l) = &self.limiter {
                l.acquire().await;
            }
            let mut req = self.client.post(&self.cfg.endpoint).json(body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            let resp = req.send().await.map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout(self.cfg.timeout_s)
                } else {
                    GatewayError::Transport(scrub(without_url(&e)))
                }
            })?;
            let status = resp.status();
            let text = resp.text().await.map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout(self.cfg.timeout_s)
                } else {
                    GatewayError::Transport(scrub(without_url(&e)))
                }
            })?;
            if status.is_success() {
                return serde_json::from_str(&text)
                    .map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")));
            }
            let snippet = scrub(text.chars().take(MAX_ERROR_BODY).collect());
            let msg = format!("HTTP {}: {snippet}", status.as_u16());
            Err(match status.as_u16() {
                401 | 403 => GatewayError::Auth(msg),
                408 | 429 | 500..=599 => GatewayError::Transport(msg),
                _ => GatewayError::Protocol(msg),
            })
        })
        .await
    }
}

fn without_url(e: &reqwest::Error) -> String {
    let mut msg = e.to_string();
    if let Some(url) = e.url() {
        msg = msg.replace(url.as_str(), "<endpoint>");
    }
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

macro_rules! http_adapter {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        pub struct $name {
            http: HttpClient,
        }

        impl $name {
            pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
                Ok(Self {
                    http: HttpClient::new(cfg)?,
                })
            }

            pub fn stats(&self) -> Arc<CallStats> {
                self.http.stats.clone()
            }
        }
    };
}

http_adapter!(HttpReasoner, "Chat-completions reasoner (messages-array JSON).");
http_adapter!(HttpGenerator, "Remote video generator using the JSON request contract.");
http_adapter!(HttpCaptioner, "Remote captioner using the JSON request contract.");
http_adapter!(HttpEvaluator, "Remote evaluator using the JSON request contract.");

#[async_trait]
impl Reasoner for HttpReasoner {
    async fn reason(
        &self,
        _ctx: &CallContext,
        request: &ReasonerRequest,
    ) -> Result<String, GatewayError> {
        let body = serde_json::to_value(ChatRequest::from_request(
            self.http.cfg.model.as_deref(),
            request,
        ))
        .expect("chat request serializes");
        let resp = self.http.post("reasoner", &body).await?;
        wire::chat_content(&resp)
    }
}

#[async_trait]
impl VideoGenerator for HttpGenerator {
    async fn generate_video(
        &self,
        ctx: &CallContext,
        prompt: &PromptText,
        params: &VideoParams,
    ) -> Result<VideoRef, GatewayError> {
        let body = serde_json::to_value(WireRequest::GenerateVideo {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            prompt: prompt.as_str().to_string(),
            params: *params,
            output_dir: ctx.video_dir.as_deref().map(|p| p.display().to_string()),
        })
        .expect("wire request serializes");
        let resp = self
            .http
            .post("generator", &body)
            .await
            .map_err(|e| GatewayError::Generation {
                status: None,
                diagnostic: e.to_string(),
            })?;
        wire::video_response(&resp)
    }
}

#[async_trait]
impl Captioner for HttpCaptioner {
    async fn caption(&self, ctx: &CallContext, video: &VideoRef) -> Result<String, GatewayError> {
        ensure_video_exists(video)?;
        let body = serde_json::to_value(WireRequest::Caption {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            video: video.clone(),
        })
        .expect("wire request serializes");
        let resp = self.http.post("captioner", &body).await?;
        wire::caption_response(&resp)
    }
}

#[async_trait]
impl Evaluator for HttpEvaluator {
    async fn evaluate(
        &self,
        ctx: &CallContext,
        video: &VideoRef,
        prompt: &PromptText,
    ) -> Result<ScorePair, GatewayError> {
        ensure_video_exists(video)?;
        let body = serde_json::to_value(WireRequest::Evaluate {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            video: video.clone(),
            prompt: prompt.as_str().to_string(),
        })
        .expect("wire request serializes");
        let resp = self.http.post("evaluator", &body).await?;
        wire::scores_response(&resp)
    }
}
