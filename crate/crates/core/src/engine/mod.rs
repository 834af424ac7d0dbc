//! The refinement loop: generate, caption, analyse, refine, evaluate, repeat.
//!
//! Every step outcome is turned into a [`LedgerEvent`], applied to the
//! in-memory session with [`apply_event`] and handed to a [`RoundSink`]. The
//! in-memory session therefore always equals what the ledger would reload.

mod stop;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::domain::{
    DomainError, PromptText, RefinementPolicy, RefinementSession, RoundRecord, StopReason,
    VideoParams,
};
use crate::gateway::{CallContext, GatewayError, Gateways};
use crate::ledger::{
    apply_event, CaptionPayload, EvaluatePayload, GenVideoPayload, LedgerError, LedgerEvent,
    RoundSink, Step1Payload, Step2Payload, Step3Payload, StopPayload,
};
use crate::prompt_kit::{self, PromptError, TemplateSet};

pub use stop::{should_stop, StopDecision};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("round {round} {step}: {source}")]
    Backend {
        round: u32,
        step: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("round {round} {step}: {source}")]
    Output {
        round: u32,
        step: &'static str,
        #[source]
        source: PromptError,
    },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Policy(#[from] DomainError),
    #[error("session '{0}' already finished")]
    Finished(String),
    #[error("interrupted")]
    Interrupted,
}

impl EngineError {
    /// Errors that end a session with `backend_failure`.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, EngineError::Backend { .. } | EngineError::Output { .. })
    }
}

/// A run that ended in an error, with the session as far as it got.
#[derive(Debug)]
pub struct RefineFailure {
    pub session: Box<RefinementSession>,
    pub error: EngineError,
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub struct Engine {
    gateways: Gateways,
    templates: Arc<TemplateSet>,
    video: VideoParams,
}

impl Engine {
    pub fn new(gateways: Gateways, templates: TemplateSet, video: VideoParams) -> Self {
        Self {
            gateways,
            templates: Arc::new(templates),
            video,
        }
    }

    /// Runs a new session until it stops.
    pub async fn refine(
        &self,
        session_id: &str,
        original_prompt: PromptText,
        policy: RefinementPolicy,
        sink: &mut (dyn RoundSink + Send),
    ) -> Result<RefinementSession, RefineFailure> {
        let mut session = RefinementSession::new(session_id, original_prompt, policy);
        match self.run(&mut session, sink, None).await {
            Ok(()) => Ok(session),
            Err(error) => Err(RefineFailure {
                session: Box::new(session),
                error,
            }),
        }
    }

    /// Runs rounds until the stopping rule fires, the cancel flag is raised
    /// (checked between rounds) or a step fails. Works for fresh sessions and
    /// for sessions reloaded from a ledger; a round left incomplete by an
    /// earlier failure is re-run, reusing the outputs it already produced.
    ///
    /// On a backend failure the session is stopped with `backend_failure`
    /// (ledgered) and the error returned. On interruption no stop is recorded,
    /// so the session stays resumable.
    pub async fn run(
        &self,
        session: &mut RefinementSession,
        sink: &mut (dyn RoundSink + Send),
        cancel: Option<&AtomicBool>,
    ) -> Result<(), EngineError> {
        session.policy.validate()?;
        if session.is_finished() {
            return Err(EngineError::Finished(session.session_id.clone()));
        }
        loop {
            if !session.rounds.is_empty() {
                if let StopDecision::Stop(reason) = should_stop(session) {
                    let stop = LedgerEvent::Stop(StopPayload {
                        reason,
                        error: None,
                    });
                    emit(session, sink, session.rounds.len() as u32 + 1, stop)?;
                    return Ok(());
                }
            }
            if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                return Err(EngineError::Interrupted);
            }
            if let Err(e) = self.run_round(session, sink).await {
                if e.is_backend_failure() {
                    let round = session.rounds.len() as u32 + 1;
                    let stop = LedgerEvent::Stop(StopPayload {
                        reason: StopReason::BackendFailure,
                        error: Some(e.to_string()),
                    });
                    if let Err(ledger) = emit(session, sink, round, stop) {
                        log::error!("cannot record backend failure: {ledger}");
                    }
                }
                return Err(e);
            }
        }
    }

    /// Runs the next round to completion: generate (or reuse) the round's
    /// video and score it, caption it, run rule extraction and mismatch
    /// analysis concurrently, run the step-back refinement, then generate
    /// and score the video of the refined prompt for the following round.
    pub async fn run_round(
        &self,
        session: &mut RefinementSession,
        sink: &mut (dyn RoundSink + Send),
    ) -> Result<(), EngineError> {
        let round = session.rounds.len() as u32 + 1;
        let prompt = session.next_prompt().clone();
        let ctx = CallContext {
            session_id: session.session_id.clone(),
            round,
            current_prompt: prompt.as_str().to_string(),
            video_dir: sink.video_dir(),
        };
        let pending = session
            .pending
            .clone()
            .filter(|p| p.index == round)
            .unwrap_or_else(|| RoundRecord::new(round, prompt.clone()));

        self.produce_video(session, sink, &ctx, &pending, &prompt).await?;
        let pending = session.pending.clone().expect("video recorded");
        let video = pending.video.clone().expect("video recorded");

        let caption = match pending.caption.clone() {
            Some(c) => c,
            None => {
                let start = Instant::now();
                let caption = self
                    .gateways
                    .captioner
                    .caption(&ctx, &video)
                    .await
                    .map_err(|source| EngineError::Backend {
                        round,
                        step: "caption",
                        source,
                    })?;
                let ev = LedgerEvent::Caption(CaptionPayload {
                    caption: caption.clone(),
                    elapsed_ms: elapsed_ms(start),
                });
                emit(session, sink, round, ev)?;
                caption
            }
        };

        let step1 = async {
            if let Some(done) = pending.rule_analysis.clone() {
                return Ok((done, None));
            }
            let start = Instant::now();
            let req = prompt_kit::render_step1(&self.templates.rule_extraction, &prompt)
                .map_err(|source| output_err(round, "step1", source))?;
            let raw = self.reason(&ctx, &req, "step1").await?;
            let parsed =
                prompt_kit::parse_step1(&raw).map_err(|source| output_err(round, "step1", source))?;
            Ok::<_, EngineError>((parsed, Some(elapsed_ms(start))))
        };
        let step2 = async {
            if let Some(done) = pending.mismatch.clone() {
                return Ok((done, None));
            }
            let start = Instant::now();
            let req =
                prompt_kit::render_step2(&self.templates.mismatch_analysis, &prompt, &caption)
                    .map_err(|source| output_err(round, "step2", source))?;
            let raw = self.reason(&ctx, &req, "step2").await?;
            let parsed = prompt_kit::parse_step2(&raw, &caption)
                .map_err(|source| output_err(round, "step2", source))?;
            Ok::<_, EngineError>((parsed, Some(elapsed_ms(start))))
        };
        let (r1, r2) = tokio::join!(step1, step2);
        // record whichever half succeeded before reporting a failure
        if let Ok((rules, Some(ms))) = &r1 {
            let ev = LedgerEvent::Step1(Step1Payload {
                rule_analysis: rules.clone(),
                elapsed_ms: *ms,
            });
            emit(session, sink, round, ev)?;
        }
        if let Ok((report, Some(ms))) = &r2 {
            let ev = LedgerEvent::Step2(Step2Payload {
                mismatch: report.clone(),
                elapsed_ms: *ms,
            });
            emit(session, sink, round, ev)?;
        }
        let (rules, _) = r1?;
        let (mismatch, _) = r2?;

        // the round's own video scores are the feedback on the prompt being
        // refined; round 1 has no earlier refinement to judge
        let prev_score = if round >= 2 { pending.scores } else { None };
        let start = Instant::now();
        let req = prompt_kit::render_step3(
            &self.templates.stepback_refine,
            &prompt,
            &rules,
            &mismatch,
            prev_score.as_ref(),
            &session.policy,
        )
        .map_err(|source| output_err(round, "step3", source))?;
        let raw = self.reason(&ctx, &req, "step3").await?;
        let refined = prompt_kit::parse_step3(&raw, &session.policy)
            .map_err(|source| output_err(round, "step3", source))?;
        if refined.truncated {
            log::warn!(
                "session {} round {round}: refined prompt cut to {} words",
                session.session_id,
                session.policy.word_limit
            );
        }
        let ev = LedgerEvent::Step3(Step3Payload {
            refined_prompt: refined.prompt.clone(),
            truncated: refined.truncated,
            elapsed_ms: elapsed_ms(start),
        });
        emit(session, sink, round, ev)?;

        let next_ctx = CallContext {
            round: round + 1,
            current_prompt: refined.prompt.as_str().to_string(),
            ..ctx
        };
        let next = RoundRecord::new(round + 1, refined.prompt.clone());
        self.produce_video(session, sink, &next_ctx, &next, &refined.prompt)
            .await
    }

    /// Generates and scores the video for `record` unless it already has them.
    async fn produce_video(
        &self,
        session: &mut RefinementSession,
        sink: &mut (dyn RoundSink + Send),
        ctx: &CallContext,
        record: &RoundRecord,
        prompt: &PromptText,
    ) -> Result<(), EngineError> {
        let round = ctx.round;
        let video = match record.video.clone() {
            Some(v) => v,
            None => {
                let start = Instant::now();
                let video = self
                    .gateways
                    .generator
                    .generate_video(ctx, prompt, &self.video)
                    .await
                    .map_err(|source| EngineError::Backend {
                        round,
                        step: "gen_video",
                        source,
                    })?;
                let ev = LedgerEvent::GenVideo(GenVideoPayload {
                    prompt: prompt.clone(),
                    video: video.clone(),
                    elapsed_ms: elapsed_ms(start),
                });
                emit(session, sink, round, ev)?;
                video
            }
        };
        if record.scores.is_none() {
            let start = Instant::now();
            let scores = self
                .gateways
                .evaluator
                .evaluate(ctx, &video, prompt)
                .await
                .map_err(|source| EngineError::Backend {
                    round,
                    step: "evaluate",
                    source,
                })?;
            let ev = LedgerEvent::Evaluate(EvaluatePayload {
                scores,
                elapsed_ms: elapsed_ms(start),
            });
            emit(session, sink, round, ev)?;
        }
        Ok(())
    }

    async fn reason(
        &self,
        ctx: &CallContext,
        req: &prompt_kit::ReasonerRequest,
        step: &'static str,
    ) -> Result<String, EngineError> {
        self.gateways
            .reasoner
            .reason(ctx, req)
            .await
            .map_err(|source| EngineError::Backend {
                round: ctx.round,
                step,
                source,
            })
    }
}

fn output_err(round: u32, step: &'static str, source: PromptError) -> EngineError {
    EngineError::Output {
        round,
        step,
        source,
    }
}

/// Applies an event to the session and forwards it to the sink. The sink
/// goes first so nothing is reflected in memory that failed to persist.
fn emit(
    session: &mut RefinementSession,
    sink: &mut (dyn RoundSink + Send),
    round: u32,
    event: LedgerEvent,
) -> Result<(), EngineError> {
    sink.record(round, &event)?;
    apply_event(session, round, &event).map_err(|e| {
        EngineError::Ledger(LedgerError::InvalidRow(format!(
            "session {}: {e}",
            session.session_id
        )))
    })
}
