use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    Category, DomainError, MismatchReport, PromptText, RefinementPolicy, RuleAnalysis, ScorePair,
    Source, VideoRef,
};

/// Wall-clock milliseconds per step name.
pub type StepTimings = BTreeMap<String, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Satisfied,
    Converged,
    RoundCap,
    BackendFailure,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Satisfied => "satisfied",
            StopReason::Converged => "converged",
            StopReason::RoundCap => "round_cap",
            StopReason::BackendFailure => "backend_failure",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "satisfied" => Ok(StopReason::Satisfied),
            "converged" => Ok(StopReason::Converged),
            "round_cap" => Ok(StopReason::RoundCap),
            "backend_failure" => Ok(StopReason::BackendFailure),
            other => Err(DomainError::UnknownVariant {
                kind: "stop reason",
                value: other.to_string(),
            }),
        }
    }
}

/// One iteration: the round prompt, its video and caption, the three step
/// outputs and the evaluator scores of the round's video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub index: u32,
    pub prompt: PromptText,
    #[serde(default)]
    pub video: Option<VideoRef>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub rule_analysis: Option<RuleAnalysis>,
    #[serde(default)]
    pub mismatch: Option<MismatchReport>,
    #[serde(default)]
    pub scores: Option<ScorePair>,
    #[serde(default)]
    pub refined_prompt: Option<PromptText>,
    /// Set when the reasoner's refined prompt exceeded the word limit and was cut.
    #[serde(default)]
    pub refined_truncated: bool,
    #[serde(default)]
    pub timing_ms: StepTimings,
}

impl RoundRecord {
    pub fn new(index: u32, prompt: PromptText) -> Self {
        Self {
            index,
            prompt,
            video: None,
            caption: None,
            rule_analysis: None,
            mismatch: None,
            scores: None,
            refined_prompt: None,
            refined_truncated: false,
            timing_ms: StepTimings::new(),
        }
    }

    /// A round is complete once Step 3 has produced its refined prompt.
    pub fn is_complete(&self) -> bool {
        self.refined_prompt.is_some()
    }
}

/// Benchmark provenance attached to sessions started from a dataset entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub id: String,
    pub source: Source,
    pub category: Category,
}

/// Full state of one prompt's multi-round refinement.
///
/// `rounds` holds completed rounds only. `pending` is the next round in
/// progress: after a round finishes it carries the video generated from the
/// refined prompt (and that video's scores), so the following round reuses it
/// instead of generating again. After a backend failure it carries whatever
/// partial outputs the failed round produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSession {
    pub session_id: String,
    pub original_prompt: PromptText,
    pub policy: RefinementPolicy,
    #[serde(default)]
    pub entry: Option<EntryMeta>,
    #[serde(default)]
    pub rounds: Vec<RoundRecord>,
    #[serde(default)]
    pub pending: Option<RoundRecord>,
    #[serde(default)]
    pub stop_reason: Option<StopReason>,
}

impl RefinementSession {
    pub fn new(
        session_id: impl Into<String>,
        original_prompt: PromptText,
        policy: RefinementPolicy,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            original_prompt,
            policy,
            entry: None,
            rounds: Vec::new(),
            pending: None,
            stop_reason: None,
        }
    }

    /// Prompt the next round must use: the original prompt for round 1,
    /// otherwise the previous round's refined prompt.
    pub fn next_prompt(&self) -> &PromptText {
        self.rounds
            .last()
            .and_then(|r| r.refined_prompt.as_ref())
            .unwrap_or(&self.original_prompt)
    }

    /// The most recent refined prompt, or the original if no round finished.
    pub fn final_prompt(&self) -> &PromptText {
        self.next_prompt()
    }

    /// Scores of every completed round, in order.
    pub fn score_history(&self) -> Vec<ScorePair> {
        self.rounds.iter().filter_map(|r| r.scores).collect()
    }

    /// Whether running more rounds is allowed: the session either never
    /// stopped or stopped because a backend failed.
    pub fn is_resumable(&self) -> bool {
        matches!(self.stop_reason, None | Some(StopReason::BackendFailure))
    }

    pub fn is_finished(&self) -> bool {
        !self.is_resumable()
    }

    pub fn category(&self) -> Category {
        self.entry
            .as_ref()
            .map(|e| e.category)
            .unwrap_or(Category::Uncategorized)
    }

    pub fn round(&self, index: u32) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.index == index)
    }
}
