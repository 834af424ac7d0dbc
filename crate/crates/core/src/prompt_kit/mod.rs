//! Builds the three per-round reasoner prompts and parses their JSON answers.
//!
//! Each step prompt is assembled from an instruction, QA-pair examples and a
//! task frame. The first two steps end with the chain-of-thought trigger; the
//! step-back refinement prompt never contains it.

mod bundle;
mod parse;
mod render;

use thiserror::Error;

pub use bundle::{Ablation, QaPair, Step, TemplateBundle, TemplatePaths, TemplateSet};
pub use parse::{extract_json_object, parse_step1, parse_step2, parse_step3, RefinedPrompt};
pub use render::{
    format_mismatches, format_rules, is_ineffective, notice_text, render_step1, render_step2,
    render_step3, score_text, ReasonerRequest,
};

/// Chain-of-thought trigger phrase used by the first two steps.
pub const TRIGGER: &str = "Let's think step by step";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template task frame lacks the {{{{{0}}}}} placeholder")]
    MissingPlaceholder(String),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("bundle is for step {found}, expected {expected}")]
    WrongStep { expected: Step, found: Step },
    #[error("invalid template bundle: {0}")]
    InvalidBundle(String),
    #[error("reasoner output contains no JSON object")]
    UnparseableOutput,
    #[error("reasoner output does not match the expected schema: {0}")]
    SchemaMismatch(String),
}
