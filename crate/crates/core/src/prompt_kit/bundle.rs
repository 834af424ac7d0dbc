use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptError, TRIGGER};

/// The three subproblems of a refinement round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    RuleExtraction,
    MismatchAnalysis,
    StepbackRefine,
}

impl Step {
    pub const ALL: [Step; 3] = [
        Step::RuleExtraction,
        Step::MismatchAnalysis,
        Step::StepbackRefine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::RuleExtraction => "rule_extraction",
            Step::MismatchAnalysis => "mismatch_analysis",
            Step::StepbackRefine => "stepback_refine",
        }
    }

    /// Whether the rendered prompt carries the chain-of-thought trigger.
    pub fn uses_trigger(self) -> bool {
        !matches!(self, Step::StepbackRefine)
    }

    pub(crate) fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Step::RuleExtraction => &["user_prompt"],
            Step::MismatchAnalysis => &["user_prompt", "caption"],
            Step::StepbackRefine => &[
                "user_prompt",
                "physical_rules",
                "mismatch",
                "prev_score",
                "word_limit",
            ],
        }
    }

    /// JSON output clause appended to the system part. Kept next to the
    /// parsers' schemas so the two cannot drift apart.
    pub(crate) fn output_format(self) -> &'static str {
        match self {
            Step::RuleExtraction => {
                "Answer with a single JSON object with the keys \"main_objects\" (a list of strings) \
                 and \"physical_rules\" (a list of strings, each one descriptive prose)."
            }
            Step::MismatchAnalysis => {
                "Answer with a single JSON object with the key \"mismatches\": a list of objects, \
                 each with the string keys \"aspect\", \"prompt_said\" and \"video_showed\"."
            }
            Step::StepbackRefine => {
                "Answer with a single JSON object with the key \"refined_prompt\" (a string)."
            }
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

fn yes() -> bool {
    true
}

/// Instruction, in-context examples and task frame for one step.
///
/// The instruction is split into its leading role sentence and the rest so the
/// role sentence can be switched off for ablations. `score_feedback` and
/// `ineffective_notice` are only used by the step-back bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBundle {
    pub version: u32,
    pub step: Step,
    pub role_sentence: String,
    pub instruction: String,
    pub examples: Vec<QaPair>,
    pub task_frame: String,
    pub trigger: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ineffective_notice: Option<String>,
    #[serde(default = "yes", skip_serializing)]
    pub include_role_sentence: bool,
    #[serde(default = "yes", skip_serializing)]
    pub include_examples: bool,
}

const DEFAULT_STEP1: &str = include_str!("../../templates/step1_rule_extraction.json");
const DEFAULT_STEP2: &str = include_str!("../../templates/step2_mismatch_analysis.json");
const DEFAULT_STEP3: &str = include_str!("../../templates/step3_stepback_refine.json");

impl TemplateBundle {
    /// The shipped bundle for `step`.
    pub fn default_for(step: Step) -> Self {
        let text = match step {
            Step::RuleExtraction => DEFAULT_STEP1,
            Step::MismatchAnalysis => DEFAULT_STEP2,
            Step::StepbackRefine => DEFAULT_STEP3,
        };
        Self::from_json(text).expect("shipped template bundle is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let bundle: TemplateBundle =
            serde_json::from_str(text).map_err(|e| PromptError::InvalidBundle(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PromptError::InvalidBundle(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |msg: String| Err(PromptError::InvalidBundle(format!("{}: {msg}", self.step)));

        if self.trigger != TRIGGER {
            return invalid(format!("trigger must be exactly \"{TRIGGER}\""));
        }
        if self.examples.is_empty() {
            return invalid("at least one QA example is required".into());
        }
        if self
            .examples
            .iter()
            .any(|qa| qa.question.trim().is_empty() || qa.answer.trim().is_empty())
        {
            return invalid("QA examples need a question and an answer".into());
        }
        for name in self.step.required_placeholders() {
            if !self.task_frame.contains(&placeholder(name)) {
                return Err(PromptError::MissingPlaceholder(name.to_string()));
            }
        }

        let fixed_parts = [&self.role_sentence, &self.instruction]
            .into_iter()
            .chain(self.examples.iter().flat_map(|qa| [&qa.question, &qa.answer]));
        for part in fixed_parts {
            if part.contains(TRIGGER) {
                return invalid("the trigger may only appear in the task frame".into());
            }
        }

        let in_frame = self.task_frame.matches(TRIGGER).count();
        if self.step.uses_trigger() {
            if in_frame != 1 {
                return invalid(format!(
                    "task frame must contain the trigger exactly once, found {in_frame}"
                ));
            }
        } else {
            if in_frame != 0 {
                return invalid("the step-back task frame must not contain the trigger".into());
            }
            let (Some(feedback), Some(notice)) = (&self.score_feedback, &self.ineffective_notice)
            else {
                return invalid("score_feedback and ineffective_notice are required".into());
            };
            if feedback.contains(TRIGGER) || notice.contains(TRIGGER) {
                return invalid("score texts must not contain the trigger".into());
            }
        }
        Ok(())
    }
}

pub(crate) fn placeholder(name: &str) -> String {
    format!("{{{{{name}}}}}")
}

/// Ablation switches applied to every bundle of a [`TemplateSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub drop_role_sentence: bool,
    pub drop_examples: bool,
}

/// One bundle per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub rule_extraction: TemplateBundle,
    pub mismatch_analysis: TemplateBundle,
    pub stepback_refine: TemplateBundle,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            rule_extraction: TemplateBundle::default_for(Step::RuleExtraction),
            mismatch_analysis: TemplateBundle::default_for(Step::MismatchAnalysis),
            stepback_refine: TemplateBundle::default_for(Step::StepbackRefine),
        }
    }
}

/// Optional per-step bundle paths; steps without a path use the shipped bundle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub rule_extraction: Option<std::path::PathBuf>,
    pub mismatch_analysis: Option<std::path::PathBuf>,
    pub stepback_refine: Option<std::path::PathBuf>,
    pub ablation: Ablation,
}

impl TemplateSet {
    pub fn load(paths: &TemplatePaths) -> Result<Self, PromptError> {
        let pick = |path: &Option<std::path::PathBuf>, step: Step| -> Result<_, PromptError> {
            let bundle = match path {
                Some(p) => TemplateBundle::load(p)?,
                None => TemplateBundle::default_for(step),
            };
            if bundle.step != step {
                return Err(PromptError::InvalidBundle(format!(
                    "bundle for {step} declares step {}",
                    bundle.step
                )));
            }
            Ok(bundle)
        };
        let set = Self {
            rule_extraction: pick(&paths.rule_extraction, Step::RuleExtraction)?,
            mismatch_analysis: pick(&paths.mismatch_analysis, Step::MismatchAnalysis)?,
            stepback_refine: pick(&paths.stepback_refine, Step::StepbackRefine)?,
        };
        Ok(set.with_ablation(paths.ablation))
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        for b in [
            &mut self.rule_extraction,
            &mut self.mismatch_analysis,
            &mut self.stepback_refine,
        ] {
            b.include_role_sentence = !ablation.drop_role_sentence;
            b.include_examples = !ablation.drop_examples;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_bundles_validate() {
        for step in Step::ALL {
            let b = TemplateBundle::default_for(step);
            assert_eq!(b.step, step);
            assert!(!b.examples.is_empty());
            b.validate().unwrap();
        }
    }

    #[test]
    fn empty_examples_rejected() {
        let mut b = TemplateBundle::default_for(Step::RuleExtraction);
        b.examples.clear();
        assert!(matches!(b.validate(), Err(PromptError::InvalidBundle(_))));
    }

    #[test]
    fn stepback_frame_needs_all_placeholders() {
        let mut b = TemplateBundle::default_for(Step::StepbackRefine);
        b.task_frame = b.task_frame.replace("{{mismatch}}", "");
        assert_eq!(
            b.validate(),
            Err(PromptError::MissingPlaceholder("mismatch".into()))
        );
    }

    #[test]
    fn trigger_rules() {
        let mut b = TemplateBundle::default_for(Step::RuleExtraction);
        b.task_frame = format!("{} {TRIGGER}", b.task_frame);
        assert!(b.validate().is_err());

        let mut b = TemplateBundle::default_for(Step::StepbackRefine);
        b.task_frame.push_str(TRIGGER);
        assert!(b.validate().is_err());

        let mut b = TemplateBundle::default_for(Step::MismatchAnalysis);
        b.trigger = "Think step by step".into();
        assert!(b.validate().is_err());
    }

    #[test]
    fn loads_from_paths_with_ablation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.json");
        std::fs::write(&path, DEFAULT_STEP1).unwrap();
        let set = TemplateSet::load(&TemplatePaths {
            rule_extraction: Some(path.clone()),
            ablation: Ablation {
                drop_role_sentence: true,
                drop_examples: false,
            },
            ..Default::default()
        })
        .unwrap();
        assert!(!set.rule_extraction.include_role_sentence);
        assert!(set.stepback_refine.include_examples);

        let wrong = TemplateSet::load(&TemplatePaths {
            mismatch_analysis: Some(path),
            ..Default::default()
        });
        assert!(wrong.is_err());
    }
}
