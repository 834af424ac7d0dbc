use thiserror::Error;

use super::{
    CaptionPayload, EvaluatePayload, GenVideoPayload, LedgerEvent, Step1Payload, Step2Payload,
    Step3Payload, StopPayload,
};
use crate::domain::{RefinementSession, RoundRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("event for round {round} but the next round is {expected}")]
    RoundOutOfSequence { round: u32, expected: u32 },
    #[error("round {round} video was generated from a prompt that does not continue the session")]
    PromptMismatch { round: u32 },
}

/// Applies one ledgered event to a session.
///
/// Events for round `rounds.len() + 1` fill the pending record, creating it
/// when needed. A Step-3 event completes the pending record and moves it to
/// `rounds`. Any non-stop event clears an earlier `backend_failure` stop
/// reason, since it means the session was resumed. Later events for a step
/// overwrite earlier ones, which is what re-running a failed round produces.
pub fn apply_event(
    session: &mut RefinementSession,
    round: u32,
    event: &LedgerEvent,
) -> Result<(), ReplayError> {
    if let LedgerEvent::Stop(StopPayload { reason, .. }) = event {
        session.stop_reason = Some(*reason);
        return Ok(());
    }
    if session.stop_reason.is_some() && session.is_resumable() {
        session.stop_reason = None;
    }

    let expected = session.rounds.len() as u32 + 1;
    if round != expected {
        return Err(ReplayError::RoundOutOfSequence { round, expected });
    }
    let next_prompt = session.next_prompt().clone();
    let record = session
        .pending
        .get_or_insert_with(|| RoundRecord::new(round, next_prompt.clone()));
    if record.index != round {
        return Err(ReplayError::RoundOutOfSequence {
            round,
            expected: record.index,
        });
    }

    let mut timing = |step: &str, ms: u64| {
        record.timing_ms.insert(step.to_string(), ms);
    };
    match event {
        LedgerEvent::GenVideo(GenVideoPayload {
            prompt,
            video,
            elapsed_ms,
        }) => {
            if *prompt != next_prompt {
                return Err(ReplayError::PromptMismatch { round });
            }
            timing("gen_video", *elapsed_ms);
            record.video = Some(video.clone());
        }
        LedgerEvent::Evaluate(EvaluatePayload { scores, elapsed_ms }) => {
            timing("evaluate", *elapsed_ms);
            record.scores = Some(*scores);
        }
        LedgerEvent::Caption(CaptionPayload {
            caption,
            elapsed_ms,
        }) => {
            timing("caption", *elapsed_ms);
            record.caption = Some(caption.clone());
        }
        LedgerEvent::Step1(Step1Payload {
            rule_analysis,
            elapsed_ms,
        }) => {
            timing("step1", *elapsed_ms);
            record.rule_analysis = Some(rule_analysis.clone());
        }
        LedgerEvent::Step2(Step2Payload {
            mismatch,
            elapsed_ms,
        }) => {
            timing("step2", *elapsed_ms);
            record.mismatch = Some(mismatch.clone());
        }
        LedgerEvent::Step3(Step3Payload {
            refined_prompt,
            truncated,
            elapsed_ms,
        }) => {
            timing("step3", *elapsed_ms);
            record.refined_prompt = Some(refined_prompt.clone());
            record.refined_truncated = *truncated;
            let done = session.pending.take().expect("pending record exists");
            session.rounds.push(done);
        }
        LedgerEvent::Stop(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn elapsed(record: &RoundRecord, step: &str) -> u64 {
    record.timing_ms.get(step).copied().unwrap_or_default()
}

fn record_events(record: &RoundRecord, out: &mut Vec<(u32, LedgerEvent)>) {
    let round = record.index;
    if let Some(video) = &record.video {
        out.push((
            round,
            LedgerEvent::GenVideo(GenVideoPayload {
                prompt: record.prompt.clone(),
                video: video.clone(),
                elapsed_ms: elapsed(record, "gen_video"),
            }),
        ));
    }
    if let Some(scores) = record.scores {
        out.push((
            round,
            LedgerEvent::Evaluate(EvaluatePayload {
                scores,
                elapsed_ms: elapsed(record, "evaluate"),
            }),
        ));
    }
    if let Some(caption) = &record.caption {
        out.push((
            round,
            LedgerEvent::Caption(CaptionPayload {
                caption: caption.clone(),
                elapsed_ms: elapsed(record, "caption"),
            }),
        ));
    }
    if let Some(rule_analysis) = &record.rule_analysis {
        out.push((
            round,
            LedgerEvent::Step1(Step1Payload {
                rule_analysis: rule_analysis.clone(),
                elapsed_ms: elapsed(record, "step1"),
            }),
        ));
    }
    if let Some(mismatch) = &record.mismatch {
        out.push((
            round,
            LedgerEvent::Step2(Step2Payload {
                mismatch: mismatch.clone(),
                elapsed_ms: elapsed(record, "step2"),
            }),
        ));
    }
    if let Some(refined_prompt) = &record.refined_prompt {
        out.push((
            round,
            LedgerEvent::Step3(Step3Payload {
                refined_prompt: refined_prompt.clone(),
                truncated: record.refined_truncated,
                elapsed_ms: elapsed(record, "step3"),
            }),
        ));
    }
}

/// The event sequence that rebuilds `session` from an empty one: every
/// completed round, the pending round, then the stop reason.
pub fn events_for(session: &RefinementSession) -> Vec<(u32, LedgerEvent)> {
    let mut out = Vec::new();
    for record in &session.rounds {
        record_events(record, &mut out);
    }
    if let Some(pending) = &session.pending {
        record_events(pending, &mut out);
    }
    if let Some(reason) = session.stop_reason {
        out.push((
            session.rounds.len() as u32 + 1,
            LedgerEvent::Stop(StopPayload {
                reason,
                error: None,
            }),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PromptText, RefinementPolicy, ScorePair, StopReason, VideoRef};

    fn video() -> VideoRef {
        VideoRef::new("v.mp4", 6.0, 8, 720, 480).unwrap()
    }

    #[test]
    fn rejects_rows_for_wrong_round() {
        let mut s = RefinementSession::new(
            "s",
            PromptText::new("p").unwrap(),
            RefinementPolicy::default(),
        );
        let ev = LedgerEvent::Evaluate(EvaluatePayload {
            scores: ScorePair::new(0.1, 0.1).unwrap(),
            elapsed_ms: 0,
        });
        assert_eq!(
            apply_event(&mut s, 2, &ev),
            Err(ReplayError::RoundOutOfSequence {
                round: 2,
                expected: 1
            })
        );
    }

    #[test]
    fn gen_video_prompt_must_chain() {
        let mut s = RefinementSession::new(
            "s",
            PromptText::new("p").unwrap(),
            RefinementPolicy::default(),
        );
        let ev = LedgerEvent::GenVideo(GenVideoPayload {
            prompt: PromptText::new("q").unwrap(),
            video: video(),
            elapsed_ms: 0,
        });
        assert_eq!(
            apply_event(&mut s, 1, &ev),
            Err(ReplayError::PromptMismatch { round: 1 })
        );
    }

    #[test]
    fn later_activity_clears_failure_stop() {
        let mut s = RefinementSession::new(
            "s",
            PromptText::new("p").unwrap(),
            RefinementPolicy::default(),
        );
        s.stop_reason = Some(StopReason::BackendFailure);
        let ev = LedgerEvent::GenVideo(GenVideoPayload {
            prompt: PromptText::new("p").unwrap(),
            video: video(),
            elapsed_ms: 3,
        });
        apply_event(&mut s, 1, &ev).unwrap();
        assert_eq!(s.stop_reason, None);
        assert_eq!(s.pending.as_ref().unwrap().timing_ms["gen_video"], 3);

        s.stop_reason = Some(StopReason::Converged);
        apply_event(&mut s, 1, &ev).unwrap();
        assert_eq!(s.stop_reason, Some(StopReason::Converged));
    }
}
