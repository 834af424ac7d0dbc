use serde::{Deserialize, Serialize};

use super::bundle::{placeholder, Step, TemplateBundle};
use super::PromptError;
use crate::domain::{MismatchReport, PromptText, RefinementPolicy, RuleAnalysis, ScorePair};

/// A chat request split into instruction material (system) and instance
/// material (user).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub system_part: String,
    pub user_part: String,
    pub expected_schema: Step,
}

impl ReasonerRequest {
    /// Number of occurrences of `needle` across both parts.
    pub fn count(&self, needle: &str) -> usize {
        self.system_part.matches(needle).count() + self.user_part.matches(needle).count()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.count(needle) > 0
    }
}

/// Single-pass placeholder substitution. Substituted values are never
/// rescanned, so a value that itself contains `{{name}}` stays literal.
/// Unbound placeholders are left as written.
pub(crate) fn fill(template: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match bindings.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn check_step(bundle: &TemplateBundle, expected: Step) -> Result<(), PromptError> {
    if bundle.step != expected {
        return Err(PromptError::WrongStep {
            expected,
            found: bundle.step,
        });
    }
    for name in expected.required_placeholders() {
        if !bundle.task_frame.contains(&placeholder(name)) {
            return Err(PromptError::MissingPlaceholder(name.to_string()));
        }
    }
    Ok(())
}

fn system_part(bundle: &TemplateBundle) -> String {
    let mut out = String::new();
    if bundle.include_role_sentence {
        out.push_str(bundle.role_sentence.trim());
        out.push(' ');
    }
    out.push_str(bundle.instruction.trim());
    if bundle.include_examples {
        out.push_str("\n\nExamples:");
        for qa in &bundle.examples {
            out.push_str("\n\nQ: ");
            out.push_str(qa.question.trim());
            out.push_str("\nA: ");
            out.push_str(qa.answer.trim());
        }
    }
    out.push_str("\n\n");
    out.push_str(bundle.step.output_format());
    out
}

/// Collapses runs of blank lines left behind by empty substitutions.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in text.trim().split('\n') {
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(line);
    }
    out
}

pub fn render_step1(
    bundle: &TemplateBundle,
    current_prompt: &PromptText,
) -> Result<ReasonerRequest, PromptError> {
    check_step(bundle, Step::RuleExtraction)?;
    let user_part = fill(&bundle.task_frame, &[("user_prompt", current_prompt.as_str())]);
    Ok(ReasonerRequest {
        system_part: system_part(bundle),
        user_part,
        expected_schema: Step::RuleExtraction,
    })
}

pub fn render_step2(
    bundle: &TemplateBundle,
    current_prompt: &PromptText,
    caption: &str,
) -> Result<ReasonerRequest, PromptError> {
    check_step(bundle, Step::MismatchAnalysis)?;
    if caption.trim().is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    let user_part = fill(
        &bundle.task_frame,
        &[("user_prompt", current_prompt.as_str()), ("caption", caption)],
    );
    Ok(ReasonerRequest {
        system_part: system_part(bundle),
        user_part,
        expected_schema: Step::MismatchAnalysis,
    })
}

/// Numbered plain-text form of a rule analysis, as embedded in the step-back prompt.
pub fn format_rules(rules: &RuleAnalysis) -> String {
    let mut out = format!("Main objects: {}", rules.main_objects.join(", "));
    for (i, rule) in rules.physical_rules.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, rule.trim()));
    }
    out
}

/// Numbered plain-text form of a mismatch report.
pub fn format_mismatches(report: &MismatchReport) -> String {
    if report.mismatches.is_empty() {
        return "No mismatch was found between the prompt and the video caption.".to_string();
    }
    report
        .mismatches
        .iter()
        .enumerate()
        .map(|(i, m)| {
            format!(
                "{}. {}: prompt said \"{}\"; video showed \"{}\"",
                i + 1,
                m.aspect.trim(),
                m.prompt_said.trim(),
                m.video_showed.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn fmt_score(v: f64) -> String {
    format!("{v:.2}")
}

/// Score feedback for the step-back prompt, including the ineffectiveness
/// notice when the selected score is below the satisfaction threshold.
/// Empty when there is no previous score.
pub fn score_text(
    bundle: &TemplateBundle,
    prev_score: Option<&ScorePair>,
    policy: &RefinementPolicy,
) -> String {
    let Some(scores) = prev_score else {
        return String::new();
    };
    let selected = policy.gating_score_selector.select(scores);
    let feedback = bundle.score_feedback.as_deref().unwrap_or_default();
    let mut out = fill(
        feedback,
        &[
            ("score", &fmt_score(selected)),
            ("pc", &fmt_score(scores.pc())),
            ("sa", &fmt_score(scores.sa())),
        ],
    );
    if is_ineffective(scores, policy) {
        out.push(' ');
        out.push_str(&notice_text(bundle, policy));
    }
    out
}

/// Rendered ineffectiveness notice for `policy`'s threshold.
pub fn notice_text(bundle: &TemplateBundle, policy: &RefinementPolicy) -> String {
    fill(
        bundle.ineffective_notice.as_deref().unwrap_or_default(),
        &[("threshold", &fmt_score(policy.satisfaction_threshold))],
    )
}

/// Whether a previous score trips the ineffectiveness gate.
pub fn is_ineffective(scores: &ScorePair, policy: &RefinementPolicy) -> bool {
    policy.gating_score_selector.select(scores) < policy.satisfaction_threshold
}

pub fn render_step3(
    bundle: &TemplateBundle,
    current_prompt: &PromptText,
    rules: &RuleAnalysis,
    mismatch: &MismatchReport,
    prev_score: Option<&ScorePair>,
    policy: &RefinementPolicy,
) -> Result<ReasonerRequest, PromptError> {
    check_step(bundle, Step::StepbackRefine)?;
    let word_limit = policy.word_limit.to_string();
    let scores = score_text(bundle, prev_score, policy);
    let rules_text = format_rules(rules);
    let mismatch_text = format_mismatches(mismatch);
    let user_part = fill(
        &bundle.task_frame,
        &[
            ("user_prompt", current_prompt.as_str()),
            ("physical_rules", &rules_text),
            ("mismatch", &mismatch_text),
            ("prev_score", &scores),
            ("word_limit", &word_limit),
        ],
    );
    Ok(ReasonerRequest {
        system_part: system_part(bundle),
        user_part: tidy(&user_part),
        expected_schema: Step::StepbackRefine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Mismatch;
    use crate::prompt_kit::TRIGGER;

    fn bundle(step: Step) -> TemplateBundle {
        TemplateBundle::default_for(step)
    }

    fn prompt(s: &str) -> PromptText {
        PromptText::new(s).unwrap()
    }

    fn rules() -> RuleAnalysis {
        RuleAnalysis::new(
            vec!["ball".into(), "table".into()],
            vec!["the ball falls under gravity".into()],
            "{}",
        )
        .unwrap()
    }

    fn mismatch() -> MismatchReport {
        MismatchReport {
            mismatches: vec![Mismatch {
                aspect: "motion".into(),
                prompt_said: "the ball drops".into(),
                video_showed: "the ball floats".into(),
            }],
            caption: "a ball floats".into(),
            raw_reasoner_output: "{}".into(),
        }
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(
            fill("[{{user_prompt}}]", &[("user_prompt", "x {{user_prompt}} y")]),
            "[x {{user_prompt}} y]"
        );
        assert_eq!(fill("{{unbound}} {{", &[]), "{{unbound}} {{");
    }

    #[test]
    fn step1_ends_with_trigger() {
        let req = render_step1(
            &bundle(Step::RuleExtraction),
            &prompt("a ball dropping onto a table"),
        )
        .unwrap();
        assert!(req.user_part.ends_with("Let's think step by step"));
        assert!(req.user_part.contains("a ball dropping onto a table"));
        assert_eq!(req.count(TRIGGER), 1);
        assert!(req.system_part.contains("\"main_objects\""));
        assert!(req.system_part.contains("\"physical_rules\""));
        assert!(req.system_part.contains("Q: "));
        assert_eq!(req.expected_schema, Step::RuleExtraction);
    }

    #[test]
    fn literal_placeholder_in_prompt_is_preserved() {
        let req = render_step1(
            &bundle(Step::RuleExtraction),
            &prompt("draw {{user_prompt}} on a wall"),
        )
        .unwrap();
        assert_eq!(req.user_part.matches("draw {{user_prompt}} on a wall").count(), 1);
    }

    #[test]
    fn missing_placeholder() {
        let mut b = bundle(Step::RuleExtraction);
        b.task_frame = "nothing here. Let's think step by step".into();
        assert_eq!(
            render_step1(&b, &prompt("x")),
            Err(PromptError::MissingPlaceholder("user_prompt".into()))
        );
    }

    #[test]
    fn wrong_bundle_for_step() {
        assert!(matches!(
            render_step1(&bundle(Step::MismatchAnalysis), &prompt("x")),
            Err(PromptError::WrongStep { .. })
        ));
    }

    #[test]
    fn step2_golden() {
        let req = render_step2(
            &bundle(Step::MismatchAnalysis),
            &prompt("a ball dropping onto a table"),
            "a ball hovering over a table",
        )
        .unwrap();
        assert_eq!(
            req.user_part,
            "User prompt: a ball dropping onto a table\n\
             Video caption: a ball hovering over a table\n\
             Identify the semantic mismatches between the user prompt and the video caption. \
             Let's think step by step"
        );
        assert!(req.system_part.contains("\"mismatches\""));
    }

    #[test]
    fn step2_identical_caption_still_renders() {
        let p = prompt("water pours into a glass");
        assert!(render_step2(&bundle(Step::MismatchAnalysis), &p, p.as_str()).is_ok());
    }

    #[test]
    fn step2_empty_caption() {
        assert_eq!(
            render_step2(&bundle(Step::MismatchAnalysis), &prompt("x"), ""),
            Err(PromptError::EmptyCaption)
        );
        assert_eq!(
            render_step2(&bundle(Step::MismatchAnalysis), &prompt("x"), "  \n"),
            Err(PromptError::EmptyCaption)
        );
    }

    #[test]
    fn step3_notice_when_score_low() {
        let b = bundle(Step::StepbackRefine);
        let policy = RefinementPolicy::default();
        let low = ScorePair::new(0.3, 0.4).unwrap();
        let req = render_step3(&b, &prompt("p"), &rules(), &mismatch(), Some(&low), &policy)
            .unwrap();
        assert!(req.user_part.contains(&notice_text(&b, &policy)));
        assert!(req.user_part.contains("was ineffective"));
        assert!(req.user_part.contains("0.3"));
        assert!(req.user_part.contains("no more than 120 words"));
        assert_eq!(req.count(TRIGGER), 0);
        assert!(!req.user_part.contains("{{"));
    }

    #[test]
    fn step3_no_notice_when_score_high() {
        let b = bundle(Step::StepbackRefine);
        let high = ScorePair::new(0.9, 0.9).unwrap();
        let req = render_step3(
            &b,
            &prompt("p"),
            &rules(),
            &mismatch(),
            Some(&high),
            &RefinementPolicy::default(),
        )
        .unwrap();
        assert!(!req.user_part.contains("was ineffective"));
        assert!(req.user_part.contains("Evaluator score"));
    }

    #[test]
    fn step3_round_one_has_no_score_text() {
        let b = bundle(Step::StepbackRefine);
        let req = render_step3(
            &b,
            &prompt("p"),
            &rules(),
            &mismatch(),
            None,
            &RefinementPolicy::default(),
        )
        .unwrap();
        assert!(!req.user_part.contains("Evaluator score"));
        assert!(!req.user_part.contains("was ineffective"));
        assert!(!req.user_part.contains("\n\n\n"));
    }

    #[test]
    fn step3_embeds_numbered_lists() {
        let b = bundle(Step::StepbackRefine);
        let req = render_step3(
            &b,
            &prompt("p"),
            &rules(),
            &mismatch(),
            None,
            &RefinementPolicy {
                word_limit: 80,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(req.user_part.contains("Main objects: ball, table\n1. the ball falls under gravity"));
        assert!(req
            .user_part
            .contains("1. motion: prompt said \"the ball drops\"; video showed \"the ball floats\""));
        assert!(req.user_part.contains("no more than 80 words"));
    }

    #[test]
    fn ablation_drops_parts() {
        let mut b = bundle(Step::RuleExtraction);
        b.include_examples = false;
        b.include_role_sentence = false;
        let req = render_step1(&b, &prompt("x")).unwrap();
        assert!(!req.system_part.contains("Examples:"));
        assert!(!req.system_part.contains(b.role_sentence.as_str()));
        assert!(req.system_part.starts_with(b.instruction.as_str()));
    }
}
