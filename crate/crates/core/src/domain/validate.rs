use std::fmt;

use super::{RefinementSession, RoundRecord};

/// A broken session invariant. Violations are reported, never raised.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InvalidPolicy(String),
    TooManyRounds { rounds: usize, max_rounds: u32 },
    RoundIndex { position: usize, index: u32 },
    Chaining { round: u32 },
    IncompleteRound { round: u32 },
    MissingStepOutputs { round: u32 },
    WordLimit { round: u32, words: usize, limit: usize },
    FormulaInRule { round: u32, rule: usize },
    EmptyMismatchField { round: u32, entry: usize },
    PendingOutOfSequence { index: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidPolicy(msg) => write!(f, "policy: {msg}"),
            Violation::TooManyRounds { rounds, max_rounds } => {
                write!(f, "{rounds} rounds exceed max_rounds {max_rounds}")
            }
            Violation::RoundIndex { position, index } => {
                write!(f, "round at position {position} has index {index}")
            }
            Violation::Chaining { round } => write!(
                f,
                "round {round} prompt is not the previous round's refined prompt"
            ),
            Violation::IncompleteRound { round } => {
                write!(f, "round {round} is listed as complete but has no refined prompt")
            }
            Violation::MissingStepOutputs { round } => write!(
                f,
                "round {round} has a refined prompt without both rule analysis and mismatch report"
            ),
            Violation::WordLimit {
                round,
                words,
                limit,
            } => write!(
                f,
                "round {round} refined prompt has {words} words, limit {limit}"
            ),
            Violation::FormulaInRule { round, rule } => {
                write!(f, "round {round} physical rule {rule} contains formula notation")
            }
            Violation::EmptyMismatchField { round, entry } => {
                write!(f, "round {round} mismatch entry {entry} has an empty field")
            }
            Violation::PendingOutOfSequence { index } => write!(
                f,
                "pending round {index} does not continue the completed rounds"
            ),
        }
    }
}

/// Checks every session invariant and returns the violations found; an empty
/// list means the session is well-formed.
pub fn validate_session(session: &RefinementSession) -> Vec<Violation> {
    let mut out = Vec::new();
    let policy = &session.policy;

    if let Err(e) = policy.validate() {
        out.push(Violation::InvalidPolicy(e.to_string()));
    }
    if session.rounds.len() > policy.max_rounds as usize {
        out.push(Violation::TooManyRounds {
            rounds: session.rounds.len(),
            max_rounds: policy.max_rounds,
        });
    }

    let mut expected_prompt = &session.original_prompt;
    for (pos, round) in session.rounds.iter().enumerate() {
        if round.index as usize != pos + 1 {
            out.push(Violation::RoundIndex {
                position: pos,
                index: round.index,
            });
        }
        if &round.prompt != expected_prompt {
            out.push(Violation::Chaining { round: round.index });
        }
        if !round.is_complete() {
            out.push(Violation::IncompleteRound { round: round.index });
        }
        check_round(round, policy.word_limit, &mut out);
        if let Some(refined) = &round.refined_prompt {
            expected_prompt = refined;
        }
    }

    if let Some(pending) = &session.pending {
        if pending.index as usize != session.rounds.len() + 1 {
            out.push(Violation::PendingOutOfSequence {
                index: pending.index,
            });
        }
        if &pending.prompt != expected_prompt {
            out.push(Violation::Chaining {
                round: pending.index,
            });
        }
        check_round(pending, policy.word_limit, &mut out);
    }
    out
}

fn check_round(round: &RoundRecord, word_limit: usize, out: &mut Vec<Violation>) {
    if let Some(refined) = &round.refined_prompt {
        if refined.word_count() > word_limit {
            out.push(Violation::WordLimit {
                round: round.index,
                words: refined.word_count(),
                limit: word_limit,
            });
        }
        if round.rule_analysis.is_none() || round.mismatch.is_none() {
            out.push(Violation::MissingStepOutputs { round: round.index });
        }
    }
    if let Some(rules) = &round.rule_analysis {
        for rule in rules.formula_lint() {
            out.push(Violation::FormulaInRule {
                round: round.index,
                rule,
            });
        }
    }
    if let Some(report) = &round.mismatch {
        for (entry, m) in report.mismatches.iter().enumerate() {
            if !m.is_complete() {
                out.push(Violation::EmptyMismatchField {
                    round: round.index,
                    entry,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        word_count, MismatchReport, PromptText, RefinementPolicy, RuleAnalysis, ScorePair,
    };

    fn complete_round(index: u32, prompt: &str, refined: &str) -> RoundRecord {
        let mut r = RoundRecord::new(index, PromptText::new(prompt).unwrap());
        r.caption = Some("a ball falls".into());
        r.rule_analysis = Some(
            RuleAnalysis::new(vec!["ball".into()], vec!["gravity pulls it down".into()], "{}")
                .unwrap(),
        );
        r.mismatch = Some(MismatchReport {
            mismatches: vec![],
            caption: "a ball falls".into(),
            raw_reasoner_output: "{}".into(),
        });
        r.scores = Some(ScorePair::new(0.3, 0.4).unwrap());
        r.refined_prompt = Some(PromptText::new(refined).unwrap());
        r
    }

    fn session_with(rounds: Vec<RoundRecord>) -> RefinementSession {
        let mut s = RefinementSession::new(
            "s1",
            PromptText::new("a ball dropping onto a table").unwrap(),
            RefinementPolicy::default(),
        );
        s.rounds = rounds;
        s
    }

    #[test]
    fn one_round_session_is_clean() {
        let s = session_with(vec![complete_round(
            1,
            "a ball dropping onto a table",
            "a rubber ball falls and bounces on a wooden table",
        )]);
        assert_eq!(validate_session(&s), vec![]);
    }

    #[test]
    fn broken_chain_is_one_violation() {
        let s = session_with(vec![
            complete_round(1, "a ball dropping onto a table", "refined one"),
            complete_round(2, "something else", "refined two"),
        ]);
        assert_eq!(validate_session(&s), vec![Violation::Chaining { round: 2 }]);
    }

    #[test]
    fn word_limit_violation_at_121_words() {
        let long = vec!["word"; 121].join(" ");
        assert_eq!(word_count(&long), 121);
        let s = session_with(vec![complete_round(1, "a ball dropping onto a table", &long)]);
        assert_eq!(
            validate_session(&s),
            vec![Violation::WordLimit {
                round: 1,
                words: 121,
                limit: 120
            }]
        );
    }

    #[test]
    fn refined_prompt_needs_both_analyses() {
        let mut r = complete_round(1, "a ball dropping onto a table", "better prompt");
        r.mismatch = None;
        let s = session_with(vec![r]);
        assert_eq!(
            validate_session(&s),
            vec![Violation::MissingStepOutputs { round: 1 }]
        );
    }

    #[test]
    fn round_budget() {
        let mut s = session_with(vec![
            complete_round(1, "a ball dropping onto a table", "p2"),
            complete_round(2, "p2", "p3"),
        ]);
        s.policy.max_rounds = 1;
        assert_eq!(
            validate_session(&s),
            vec![Violation::TooManyRounds {
                rounds: 2,
                max_rounds: 1
            }]
        );
    }

    #[test]
    fn pending_must_continue_chain() {
        let mut s = session_with(vec![complete_round(1, "a ball dropping onto a table", "p2")]);
        s.pending = Some(RoundRecord::new(2, PromptText::new("p2").unwrap()));
        assert!(validate_session(&s).is_empty());
        s.pending = Some(RoundRecord::new(3, PromptText::new("other").unwrap()));
        assert_eq!(validate_session(&s).len(), 2);
    }
}
