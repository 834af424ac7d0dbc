use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    ensure_video_exists, CallContext, Captioner, Evaluator, GatewayError, Reasoner,
    VideoGenerator,
};
use crate::domain::{PromptText, ScorePair, VideoParams, VideoRef};
use crate::prompt_kit::{ReasonerRequest, Step};

/// Canned reasoner output for one (step, round), optionally for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedResponse {
    pub step: Step,
    pub round: u32,
    #[serde(default)]
    pub session: Option<String>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordBonus {
    pub keyword: String,
    #[serde(default)]
    pub pc_bonus: f64,
    #[serde(default)]
    pub sa_bonus: f64,
}

/// Exact scores for any prompt containing `keyword`; the first match wins and
/// takes precedence over the additive rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedScoreRule {
    pub keyword: String,
    pub pc: f64,
    pub sa: f64,
}

/// Declarative scoring: base scores plus the bonus of every keyword the
/// prompt contains, clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockEvaluatorFn {
    pub base_pc: f64,
    pub base_sa: f64,
    pub keywords: Vec<KeywordBonus>,
    pub fixed: Vec<FixedScoreRule>,
}

impl Default for MockEvaluatorFn {
    fn default() -> Self {
        Self {
            base_pc: 0.2,
            base_sa: 0.2,
            keywords: Vec::new(),
            fixed: Vec::new(),
        }
    }
}

impl MockEvaluatorFn {
    pub fn score(&self, prompt: &str) -> ScorePair {
        if let Some(rule) = self.fixed.iter().find(|r| prompt.contains(&r.keyword)) {
            return ScorePair::clamped(rule.pc, rule.sa);
        }
        let (mut pc, mut sa) = (self.base_pc, self.base_sa);
        for k in self.keywords.iter().filter(|k| prompt.contains(&k.keyword)) {
            pc += k.pc_bonus;
            sa += k.sa_bonus;
        }
        ScorePair::clamped(pc, sa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockOp {
    Reason,
    GenerateVideo,
    Caption,
    Evaluate,
}

/// Makes matching calls fail. `times` bounds how many matching calls fail
/// before the rule stops firing; absent means every matching call fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRule {
    pub op: MockOp,
    #[serde(default)]
    pub step: Option<Step>,
    #[serde(default)]
    pub round: Option<u32>,
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub times: Option<u32>,
    #[serde(default)]
    pub message: Option<String>,
}

/// Everything a mock backend answers with.
///
/// Reasoner calls without a scripted response get a synthetic answer: Step 1
/// names objects from the prompt, Step 2 reports no mismatch when the caption
/// mentions the prompt, and Step 3 appends `refine_suffixes[round - 1]` (if
/// any) to the current prompt.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub responses: Vec<ScriptedResponse>,
    pub refine_suffixes: Vec<String>,
    pub captions: BTreeMap<String, String>,
    pub evaluator: MockEvaluatorFn,
    pub failures: Vec<FailureRule>,
    pub latency_ms: u64,
    pub video_dir: Option<PathBuf>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            GatewayError::Config(format!("invalid mock script {}: {e}", path.display()))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TranscriptEvent {
    Request {
        session_id: String,
        round: u32,
        request: ReasonerRequest,
    },
    Response {
        session_id: String,
        round: u32,
        step: Step,
        raw: String,
    },
    GenerateVideo {
        session_id: String,
        round: u32,
        prompt: String,
    },
    Caption {
        session_id: String,
        round: u32,
        locator: String,
    },
    Evaluate {
        session_id: String,
        round: u32,
        prompt: String,
        scores: ScorePair,
    },
    Failure {
        session_id: String,
        round: u32,
        op: MockOp,
    },
}

impl TranscriptEvent {
    pub fn session_id(&self) -> &str {
        match self {
            TranscriptEvent::Request { session_id, .. }
            | TranscriptEvent::Response { session_id, .. }
            | TranscriptEvent::GenerateVideo { session_id, .. }
            | TranscriptEvent::Caption { session_id, .. }
            | TranscriptEvent::Evaluate { session_id, .. }
            | TranscriptEvent::Failure { session_id, .. } => session_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MockCounts {
    pub reason: u64,
    pub generate_video: u64,
    pub caption: u64,
    pub evaluate: u64,
}

impl MockCounts {
    pub fn total(&self) -> u64 {
        self.reason + self.generate_video + self.caption + self.evaluate
    }
}

/// Deterministic in-process backend serving all four roles.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: MockScript,
    transcript: Mutex<Vec<TranscriptEvent>>,
    fired: Mutex<Vec<u32>>,
    reason_calls: AtomicU64,
    generate_calls: AtomicU64,
    caption_calls: AtomicU64,
    evaluate_calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let rules = script.failures.len();
        Self {
            script,
            fired: Mutex::new(vec![0; rules]),
            ..Default::default()
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn transcript(&self) -> Vec<TranscriptEvent> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    /// Transcript entries of one session, in call order.
    pub fn session_transcript(&self, session_id: &str) -> Vec<TranscriptEvent> {
        self.transcript()
            .into_iter()
            .filter(|e| e.session_id() == session_id)
            .collect()
    }

    pub fn counts(&self) -> MockCounts {
        MockCounts {
            reason: self.reason_calls.load(Ordering::SeqCst),
            generate_video: self.generate_calls.load(Ordering::SeqCst),
            caption: self.caption_calls.load(Ordering::SeqCst),
            evaluate: self.evaluate_calls.load(Ordering::SeqCst),
        }
    }

    fn record(&self, event: TranscriptEvent) {
        self.transcript.lock().expect("transcript lock").push(event);
    }

    async fn latency(&self) {
        if self.script.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.script.latency_ms)).await;
        }
    }

    /// The failure message of the first rule that fires for this call, if any.
    fn check_failure(&self, op: MockOp, ctx: &CallContext, step: Option<Step>) -> Option<String> {
        let mut fired = self.fired.lock().expect("failure lock");
        for (i, rule) in self.script.failures.iter().enumerate() {
            let matches = rule.op == op
                && rule.step.is_none_or(|s| Some(s) == step)
                && rule.round.is_none_or(|r| r == ctx.round)
                && rule.session.as_ref().is_none_or(|s| *s == ctx.session_id);
            if !matches {
                continue;
            }
            if rule.times.is_some_and(|t| fired[i] >= t) {
                continue;
            }
            fired[i] += 1;
            drop(fired);
            self.record(TranscriptEvent::Failure {
                session_id: ctx.session_id.clone(),
                round: ctx.round,
                op,
            });
            return Some(
                rule.message
                    .clone()
                    .unwrap_or_else(|| format!("scripted {op:?} failure")),
            );
        }
        None
    }

    fn scripted(&self, step: Step, ctx: &CallContext) -> Option<String> {
        let matching = |r: &&ScriptedResponse| r.step == step && r.round == ctx.round;
        self.script
            .responses
            .iter()
            .filter(matching)
            .find(|r| r.session.as_deref() == Some(ctx.session_id.as_str()))
            .or_else(|| {
                self.script
                    .responses
                    .iter()
                    .filter(matching)
                    .find(|r| r.session.is_none())
            })
            .map(|r| r.raw.clone())
    }

    fn synthetic(&self, step: Step, ctx: &CallContext, request: &ReasonerRequest) -> String {
        let prompt = ctx.current_prompt.trim();
        match step {
            Step::RuleExtraction => {
                let mut objects: Vec<String> = prompt
                    .split_whitespace()
                    .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                    .filter(|w| w.len() > 3)
                    .take(3)
                    .collect();
                if objects.is_empty() {
                    objects.push("scene".into());
                }
                json!({
                    "main_objects": objects,
                    "physical_rules": [
                        "Objects keep their shape and move only when something pushes or pulls them.",
                        "Falling objects speed up under gravity and sliding objects slow down through friction."
                    ]
                })
                .to_string()
            }
            Step::MismatchAnalysis => {
                let caption = request
                    .user_part
                    .lines()
                    .find_map(|l| l.strip_prefix("Video caption:"))
                    .map(str::trim)
                    .unwrap_or_default();
                if prompt.is_empty() || caption.contains(prompt) {
                    json!({"mismatches": []}).to_string()
                } else {
                    json!({"mismatches": [{
                        "aspect": "content",
                        "prompt_said": prompt,
                        "video_showed": caption,
                    }]})
                    .to_string()
                }
            }
            Step::StepbackRefine => {
                let suffix = (ctx.round as usize)
                    .checked_sub(1)
                    .and_then(|i| self.script.refine_suffixes.get(i));
                let refined = match suffix {
                    Some(s) => format!("{prompt} {s}"),
                    None => prompt.to_string(),
                };
                json!({"refined_prompt": refined}).to_string()
            }
        }
    }

    fn video_dir(&self, ctx: &CallContext) -> PathBuf {
        ctx.video_dir
            .clone()
            .or_else(|| self.script.video_dir.clone())
            .unwrap_or_else(|| std::env::temp_dir().join("physprompt-mock-videos"))
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[async_trait]
impl Reasoner for MockBackend {
    async fn reason(
        &self,
        ctx: &CallContext,
        request: &ReasonerRequest,
    ) -> Result<String, GatewayError> {
        self.reason_calls.fetch_add(1, Ordering::SeqCst);
        let step = request.expected_schema;
        self.record(TranscriptEvent::Request {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            request: request.clone(),
        });
        self.latency().await;
        if let Some(msg) = self.check_failure(MockOp::Reason, ctx, Some(step)) {
            return Err(GatewayError::Transport(msg));
        }
        let raw = self
            .scripted(step, ctx)
            .unwrap_or_else(|| self.synthetic(step, ctx, request));
        self.record(TranscriptEvent::Response {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            step,
            raw: raw.clone(),
        });
        Ok(raw)
    }
}

#[async_trait]
impl VideoGenerator for MockBackend {
    async fn generate_video(
        &self,
        ctx: &CallContext,
        prompt: &PromptText,
        params: &VideoParams,
    ) -> Result<VideoRef, GatewayError> {
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        self.latency().await;
        if let Some(msg) = self.check_failure(MockOp::GenerateVideo, ctx, None) {
            return Err(GatewayError::Generation {
                status: Some(1),
                diagnostic: msg,
            });
        }
        let dir = self.video_dir(ctx);
        let path = dir.join(format!(
            "{}-r{}.video.json",
            file_safe(&ctx.session_id),
            ctx.round
        ));
        let placeholder = json!({"prompt": prompt.as_str(), "params": params});
        let write = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(&path, placeholder.to_string()));
        if let Err(e) = write {
            return Err(GatewayError::Generation {
                status: None,
                diagnostic: format!("cannot write {}: {e}", path.display()),
            });
        }
        self.record(TranscriptEvent::GenerateVideo {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            prompt: prompt.as_str().to_string(),
        });
        VideoRef::new(
            path.display().to_string(),
            params.duration_s,
            params.fps,
            params.width,
            params.height,
        )
        .map_err(|e| GatewayError::Generation {
            status: None,
            diagnostic: e.to_string(),
        })
    }
}

#[async_trait]
impl Captioner for MockBackend {
    async fn caption(&self, ctx: &CallContext, video: &VideoRef) -> Result<String, GatewayError> {
        self.caption_calls.fetch_add(1, Ordering::SeqCst);
        self.latency().await;
        if let Some(msg) = self.check_failure(MockOp::Caption, ctx, None) {
            return Err(GatewayError::Caption(msg));
        }
        let caption = match self.script.captions.get(&video.locator) {
            Some(c) => c.clone(),
            None => {
                ensure_video_exists(video)?;
                let text = std::fs::read_to_string(&video.locator)
                    .map_err(|e| GatewayError::Caption(e.to_string()))?;
                let prompt = serde_json::from_str::<serde_json::Value>(&text)
                    .ok()
                    .and_then(|v| v.get("prompt").and_then(|p| p.as_str()).map(str::to_string))
                    .unwrap_or_else(|| "an unidentified scene".into());
                format!("A video showing {prompt}")
            }
        };
        self.record(TranscriptEvent::Caption {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            locator: video.locator.clone(),
        });
        Ok(caption)
    }
}

#[async_trait]
impl Evaluator for MockBackend {
    async fn evaluate(
        &self,
        ctx: &CallContext,
        _video: &VideoRef,
        prompt: &PromptText,
    ) -> Result<ScorePair, GatewayError> {
        self.evaluate_calls.fetch_add(1, Ordering::SeqCst);
        self.latency().await;
        if let Some(msg) = self.check_failure(MockOp::Evaluate, ctx, None) {
            return Err(GatewayError::Evaluation(msg));
        }
        let scores = self.script.evaluator.score(prompt.as_str());
        self.record(TranscriptEvent::Evaluate {
            session_id: ctx.session_id.clone(),
            round: ctx.round,
            prompt: prompt.as_str().to_string(),
            scores,
        });
        Ok(scores)
    }
}
