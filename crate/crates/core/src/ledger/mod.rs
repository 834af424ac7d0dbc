//! Append-only CSV record of every step of every session, plus per-round JSON
//! artifacts, with enough information to reload and resume a session.
//!
//! Layout of one session directory:
//!
//! ```text
//! <root>/<session_id>/
//!     config.json          session id, original prompt, policy, effective config
//!     ledger.csv           session_id,round,step,timestamp,payload
//!     rounds/<n>/          step1.json step2.json step3.json scores.json prompt.txt
//!     videos/              files written by local video backends
//! ```
//!
//! The CSV ledger is the source of truth; the per-round files are convenience
//! copies. Every row's payload is a JSON object decoded by the same
//! [`apply_event`] function the engine uses to update its in-memory session, so
//! a reloaded session equals the one that produced the ledger.

mod replay;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    MismatchReport, PromptText, RuleAnalysis, ScorePair, StopReason, VideoRef,
};

pub use replay::{apply_event, events_for, ReplayError};
pub use store::{
    list_sessions, load_session, AppendTarget, FileTarget, LedgerRow, NullSink, RoundSink,
    SessionConfigFile, SessionLedger, CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger storage error: {0}")]
    Storage(String),
    #[error("corrupt ledger at row {row}: {reason}")]
    Corrupt { row: u64, reason: String },
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("invalid ledger row: {0}")]
    InvalidRow(String),
    #[error("row ({round}, {step}) appended after ({last_round}, {last_step})")]
    OutOfOrder {
        round: u32,
        step: LedgerStep,
        last_round: u32,
        last_step: LedgerStep,
    },
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::Storage(e.to_string())
    }
}

/// Step column of the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerStep {
    GenVideo,
    Caption,
    Step1,
    Step2,
    Evaluate,
    Step3,
    Stop,
}

impl LedgerStep {
    pub const ALL: [LedgerStep; 7] = [
        LedgerStep::GenVideo,
        LedgerStep::Caption,
        LedgerStep::Step1,
        LedgerStep::Step2,
        LedgerStep::Evaluate,
        LedgerStep::Step3,
        LedgerStep::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LedgerStep::GenVideo => "gen_video",
            LedgerStep::Caption => "caption",
            LedgerStep::Step1 => "step1",
            LedgerStep::Step2 => "step2",
            LedgerStep::Evaluate => "evaluate",
            LedgerStep::Step3 => "step3",
            LedgerStep::Stop => "stop",
        }
    }

    /// Position of the step within a round. A video is scored as soon as it
    /// exists, so `evaluate` ranks right after `gen_video`; the two analysis
    /// steps run concurrently and share a rank.
    pub fn rank(self) -> u8 {
        match self {
            LedgerStep::GenVideo => 0,
            LedgerStep::Evaluate => 1,
            LedgerStep::Caption => 2,
            LedgerStep::Step1 | LedgerStep::Step2 => 3,
            LedgerStep::Step3 => 4,
            LedgerStep::Stop => 5,
        }
    }
}

impl fmt::Display for LedgerStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LedgerStep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LedgerStep::ALL
            .into_iter()
            .find(|step| step.as_str() == s)
            .ok_or_else(|| format!("unknown step '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenVideoPayload {
    pub prompt: PromptText,
    pub video: VideoRef,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatePayload {
    pub scores: ScorePair,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPayload {
    pub caption: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Payload {
    pub rule_analysis: RuleAnalysis,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Payload {
    pub mismatch: MismatchReport,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step3Payload {
    pub refined_prompt: PromptText,
    pub truncated: bool,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPayload {
    pub reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One ledgered outcome. Each variant maps to one [`LedgerStep`].
#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEvent {
    GenVideo(GenVideoPayload),
    Evaluate(EvaluatePayload),
    Caption(CaptionPayload),
    Step1(Step1Payload),
    Step2(Step2Payload),
    Step3(Step3Payload),
    Stop(StopPayload),
}

impl LedgerEvent {
    pub fn step(&self) -> LedgerStep {
        match self {
            LedgerEvent::GenVideo(_) => LedgerStep::GenVideo,
            LedgerEvent::Evaluate(_) => LedgerStep::Evaluate,
            LedgerEvent::Caption(_) => LedgerStep::Caption,
            LedgerEvent::Step1(_) => LedgerStep::Step1,
            LedgerEvent::Step2(_) => LedgerStep::Step2,
            LedgerEvent::Step3(_) => LedgerStep::Step3,
            LedgerEvent::Stop(_) => LedgerStep::Stop,
        }
    }

    /// Canonical (compact) JSON payload.
    pub fn payload(&self) -> String {
        let encoded = match self {
            LedgerEvent::GenVideo(p) => serde_json::to_string(p),
            LedgerEvent::Evaluate(p) => serde_json::to_string(p),
            LedgerEvent::Caption(p) => serde_json::to_string(p),
            LedgerEvent::Step1(p) => serde_json::to_string(p),
            LedgerEvent::Step2(p) => serde_json::to_string(p),
            LedgerEvent::Step3(p) => serde_json::to_string(p),
            LedgerEvent::Stop(p) => serde_json::to_string(p),
        };
        encoded.expect("ledger payloads serialize")
    }

    pub fn decode(step: LedgerStep, payload: &str) -> Result<Self, serde_json::Error> {
        Ok(match step {
            LedgerStep::GenVideo => LedgerEvent::GenVideo(serde_json::from_str(payload)?),
            LedgerStep::Evaluate => LedgerEvent::Evaluate(serde_json::from_str(payload)?),
            LedgerStep::Caption => LedgerEvent::Caption(serde_json::from_str(payload)?),
            LedgerStep::Step1 => LedgerEvent::Step1(serde_json::from_str(payload)?),
            LedgerStep::Step2 => LedgerEvent::Step2(serde_json::from_str(payload)?),
            LedgerStep::Step3 => LedgerEvent::Step3(serde_json::from_str(payload)?),
            LedgerStep::Stop => LedgerEvent::Stop(serde_json::from_str(payload)?),
        })
    }
}
