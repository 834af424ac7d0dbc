use crate::domain::{RefinementSession, StopReason};

/// Outcome of the stopping rule after a completed round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Stopping rule, checked in order:
///
/// 1. `satisfied` when the latest selected score reaches the threshold;
/// 2. `converged` when each of the last `convergence_window` round-to-round
///    changes of the selected score is below `convergence_epsilon`
///    (an epsilon of 0 turns this check off);
/// 3. `round_cap` when `max_rounds` rounds are complete.
///
/// A session without completed rounds always continues.
pub fn should_stop(session: &RefinementSession) -> StopDecision {
    let policy = &session.policy;
    let selected: Vec<f64> = session
        .score_history()
        .iter()
        .map(|s| policy.gating_score_selector.select(s))
        .collect();
    let Some(&last) = selected.last() else {
        return StopDecision::Continue;
    };
    if last >= policy.satisfaction_threshold {
        return StopDecision::Stop(StopReason::Satisfied);
    }
    let window = policy.convergence_window as usize;
    if policy.convergence_epsilon > 0.0 && selected.len() > window {
        let stalled = selected
            .windows(2)
            .rev()
            .take(window)
            .all(|w| w[1] - w[0] < policy.convergence_epsilon);
        if stalled {
            return StopDecision::Stop(StopReason::Converged);
        }
    }
    if session.rounds.len() >= policy.max_rounds as usize {
        return StopDecision::Stop(StopReason::RoundCap);
    }
    StopDecision::Continue
}
