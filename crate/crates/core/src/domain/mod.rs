//! Shared value types for refinement sessions, benchmark entries and reports.
//!
//! Everything here is plain data: no I/O and no backend calls. Types that carry
//! invariants validate them on construction and again on deserialization, so a
//! value that exists is a value that is valid.

mod prompt;
mod session;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{truncate_words, word_count, PromptText};
pub use session::{EntryMeta, RefinementSession, RoundRecord, StepTimings, StopReason};
pub use validate::{validate_session, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("stated word_count {stated} does not match text ({actual} words)")]
    WordCountMismatch { stated: usize, actual: usize },
    #[error("{metric} score {value} is outside [0, 1]")]
    ScoreOutOfRange { metric: &'static str, value: f64 },
    #[error("invalid video reference: {0}")]
    InvalidVideo(String),
    #[error("invalid refinement policy: {0}")]
    InvalidPolicy(String),
    #[error("{field} must not be empty")]
    EmptyField { field: &'static str },
    #[error("category {category} is not allowed for source {source_name}")]
    CategoryForSource {
        category: Category,
        source_name: Source,
    },
    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },
}

static FORMULA_PATTERNS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\d\s*=|=\s*\d|\$|\\\(|\\\)|\\\[|\\\]|\\frac|\\begin\{").expect("static regex")
});

/// Heuristic check for formula notation in what should be descriptive prose:
/// `=` adjacent to a digit or any LaTeX math delimiter.
pub fn looks_like_formula(text: &str) -> bool {
    FORMULA_PATTERNS.is_match(text)
}

/// Output of the physical-rule extraction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAnalysis {
    pub main_objects: Vec<String>,
    pub physical_rules: Vec<String>,
    pub raw_reasoner_output: String,
}

impl RuleAnalysis {
    pub fn new(
        main_objects: Vec<String>,
        physical_rules: Vec<String>,
        raw_reasoner_output: impl Into<String>,
    ) -> Result<Self, DomainError> {
        if main_objects.is_empty() {
            return Err(DomainError::EmptyField {
                field: "main_objects",
            });
        }
        if physical_rules.is_empty() {
            return Err(DomainError::EmptyField {
                field: "physical_rules",
            });
        }
        Ok(Self {
            main_objects,
            physical_rules,
            raw_reasoner_output: raw_reasoner_output.into(),
        })
    }

    /// Indices of rules that read like formulas rather than prose.
    pub fn formula_lint(&self) -> Vec<usize> {
        self.physical_rules
            .iter()
            .enumerate()
            .filter(|(_, r)| looks_like_formula(r))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub aspect: String,
    pub prompt_said: String,
    pub video_showed: String,
}

impl Mismatch {
    pub fn is_complete(&self) -> bool {
        !self.aspect.trim().is_empty()
            && !self.prompt_said.trim().is_empty()
            && !self.video_showed.trim().is_empty()
    }
}

/// Output of the prompt/caption mismatch step. An empty list means the caption
/// matched the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub mismatches: Vec<Mismatch>,
    pub caption: String,
    pub raw_reasoner_output: String,
}

/// Physical commonsense (PC) and semantic adherence (SA) scores, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores")]
pub struct ScorePair {
    pc: f64,
    sa: f64,
}

#[derive(Deserialize)]
struct RawScores {
    pc: f64,
    sa: f64,
}

impl TryFrom<RawScores> for ScorePair {
    type Error = DomainError;
    fn try_from(raw: RawScores) -> Result<Self, Self::Error> {
        ScorePair::new(raw.pc, raw.sa)
    }
}

impl ScorePair {
    pub fn new(pc: f64, sa: f64) -> Result<Self, DomainError> {
        check_unit("pc", pc)?;
        check_unit("sa", sa)?;
        Ok(Self { pc, sa })
    }

    /// Clamps both values into [0, 1]. NaN maps to 0.
    pub fn clamped(pc: f64, sa: f64) -> Self {
        let clamp = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Self {
            pc: clamp(pc),
            sa: clamp(sa),
        }
    }

    pub fn pc(&self) -> f64 {
        self.pc
    }

    pub fn sa(&self) -> f64 {
        self.sa
    }
}

fn check_unit(metric: &'static str, value: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(DomainError::ScoreOutOfRange { metric, value })
    }
}

/// Locator and format of a generated video. Pixel data is never held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVideo")]
pub struct VideoRef {
    pub locator: String,
    pub duration_s: f64,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawVideo {
    locator: String,
    duration_s: f64,
    fps: u32,
    width: u32,
    height: u32,
}

impl TryFrom<RawVideo> for VideoRef {
    type Error = DomainError;
    fn try_from(r: RawVideo) -> Result<Self, Self::Error> {
        VideoRef::new(r.locator, r.duration_s, r.fps, r.width, r.height)
    }
}

impl VideoRef {
    pub fn new(
        locator: impl Into<String>,
        duration_s: f64,
        fps: u32,
        width: u32,
        height: u32,
    ) -> Result<Self, DomainError> {
        let locator = locator.into();
        if locator.trim().is_empty() {
            return Err(DomainError::InvalidVideo("empty locator".into()));
        }
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(DomainError::InvalidVideo(format!(
                "duration {duration_s} s must be positive"
            )));
        }
        if fps < 1 {
            return Err(DomainError::InvalidVideo("fps must be at least 1".into()));
        }
        if width < 16 || height < 16 {
            return Err(DomainError::InvalidVideo(format!(
                "resolution {width}x{height} below 16x16"
            )));
        }
        Ok(Self {
            locator,
            duration_s,
            fps,
            width,
            height,
        })
    }
}

/// Requested generation parameters, passed to the video backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoParams {
    pub duration_s: f64,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
}

impl Default for VideoParams {
    fn default() -> Self {
        Self {
            duration_s: 6.0,
            fps: 8,
            width: 720,
            height: 480,
        }
    }
}

/// Which evaluator output gates refinement decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSelector {
    Pc,
    Sa,
    #[default]
    MinOfBoth,
}

impl ScoreSelector {
    pub fn select(self, scores: &ScorePair) -> f64 {
        match self {
            ScoreSelector::Pc => scores.pc,
            ScoreSelector::Sa => scores.sa,
            ScoreSelector::MinOfBoth => scores.pc.min(scores.sa),
        }
    }
}

/// Parameters of the refinement loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementPolicy {
    pub max_rounds: u32,
    pub satisfaction_threshold: f64,
    pub convergence_epsilon: f64,
    pub convergence_window: u32,
    pub gating_score_selector: ScoreSelector,
    pub word_limit: usize,
}

impl Default for RefinementPolicy {
    fn default() -> Self {
        Self {
            max_rounds: 4,
            satisfaction_threshold: 0.5,
            convergence_epsilon: 0.05,
            convergence_window: 1,
            gating_score_selector: ScoreSelector::MinOfBoth,
            word_limit: 120,
        }
    }
}

impl RefinementPolicy {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.max_rounds < 1 {
            return Err(DomainError::InvalidPolicy("max_rounds must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.satisfaction_threshold) {
            return Err(DomainError::InvalidPolicy(format!(
                "satisfaction_threshold {} outside [0, 1]",
                self.satisfaction_threshold
            )));
        }
        if !(self.convergence_epsilon >= 0.0 && self.convergence_epsilon.is_finite()) {
            return Err(DomainError::InvalidPolicy(format!(
                "convergence_epsilon {} must be >= 0",
                self.convergence_epsilon
            )));
        }
        if self.convergence_window < 1 {
            return Err(DomainError::InvalidPolicy(
                "convergence_window must be >= 1".into(),
            ));
        }
        if self.word_limit < 1 {
            return Err(DomainError::InvalidPolicy("word_limit must be >= 1".into()));
        }
        Ok(())
    }
}

macro_rules! string_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = DomainError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(DomainError::UnknownVariant { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Videophy,
    Phygenbench,
    Custom,
}

string_enum!(Source, "source", {
    Videophy => "videophy",
    Phygenbench => "phygenbench",
    Custom => "custom",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SolidSolid,
    SolidFluid,
    FluidFluid,
    Mechanics,
    Optics,
    Thermal,
    Uncategorized,
}

string_enum!(Category, "category", {
    SolidSolid => "solid_solid",
    SolidFluid => "solid_fluid",
    FluidFluid => "fluid_fluid",
    Mechanics => "mechanics",
    Optics => "optics",
    Thermal => "thermal",
    Uncategorized => "uncategorized",
});

impl Category {
    pub fn allowed_for(self, source: Source) -> bool {
        use Category::*;
        match (source, self) {
            (_, Uncategorized) | (Source::Custom, _) => true,
            (Source::Videophy, c) => matches!(c, SolidSolid | SolidFluid | FluidFluid),
            (Source::Phygenbench, c) => matches!(c, Mechanics | Optics | Thermal),
        }
    }
}

/// One benchmark prompt with its provenance and physical-rule category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub prompt: PromptText,
    pub source: Source,
    pub category: Category,
}

impl DatasetEntry {
    pub fn new(
        id: impl Into<String>,
        prompt: PromptText,
        source: Source,
        category: Category,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(DomainError::EmptyField { field: "id" });
        }
        if !category.allowed_for(source) {
            return Err(DomainError::CategoryForSource {
                category,
                source_name: source,
            });
        }
        Ok(Self {
            id,
            prompt,
            source,
            category,
        })
    }
}

/// Binarized means for one cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_pc: f64,
    pub mean_sa: f64,
    pub n: usize,
}

/// Per-round and per-category binarized PC/SA means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_round: BTreeMap<u32, MetricSummary>,
    pub per_category: BTreeMap<Category, MetricSummary>,
    pub binarize_threshold: f64,
    pub excluded: usize,
}
