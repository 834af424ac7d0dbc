#![allow(dead_code)]

use std::sync::Arc;

use physprompt_core::domain::VideoParams;
use physprompt_core::engine::Engine;
use physprompt_core::gateway::{Gateways, MockBackend, MockScript};
use physprompt_core::prompt_kit::TemplateSet;
use tempfile::TempDir;

/// An engine over one mock backend whose placeholder videos live in a
/// private temporary directory.
pub struct MockWorld {
    pub engine: Engine,
    pub mock: Arc<MockBackend>,
    pub dir: TempDir,
}

pub fn mock_world(mut script: MockScript) -> MockWorld {
    let dir = tempfile::tempdir().unwrap();
    if script.video_dir.is_none() {
        script.video_dir = Some(dir.path().join("videos"));
    }
    let mock = Arc::new(MockBackend::new(script));
    let engine = Engine::new(
        Gateways::mock(mock.clone()),
        TemplateSet::default(),
        VideoParams::default(),
    );
    MockWorld { engine, mock, dir }
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub mod random {
    use physprompt_core::domain::{
        Category, EntryMeta, Mismatch, MismatchReport, PromptText, RefinementPolicy,
        RefinementSession, RoundRecord, RuleAnalysis, ScorePair, ScoreSelector, Source,
        StopReason, VideoRef,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    // words chosen to stress CSV quoting and JSON escaping
    const WORDS: &[&str] = &[
        "ball", "water", "glass,", "\"quoted\"", "ice", "flows", "falls", "line\nbreak",
        "crème", "tab\there", "50%", "a,b,c", "'single'", "back\\slash", "rolls", "smoke",
        "\r\nCRLF", "🚀", "slowly", "steam",
    ];

    pub fn rng(seed: u64) -> StdRng {
        StdRng::seed_from_u64(seed)
    }

    pub fn text(rng: &mut StdRng, max_words: usize) -> String {
        let n = rng.random_range(1..=max_words.max(1));
        (0..n)
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn prompt(rng: &mut StdRng, max_words: usize) -> PromptText {
        PromptText::new(text(rng, max_words)).unwrap()
    }

    pub fn scores(rng: &mut StdRng) -> ScorePair {
        ScorePair::new(rng.random::<f64>(), rng.random::<f64>()).unwrap()
    }

    pub fn policy(rng: &mut StdRng) -> RefinementPolicy {
        RefinementPolicy {
            max_rounds: rng.random_range(1..=5),
            satisfaction_threshold: rng.random::<f64>(),
            convergence_epsilon: rng.random_range(0.0..0.2),
            convergence_window: rng.random_range(1..=3),
            gating_score_selector: [ScoreSelector::Pc, ScoreSelector::Sa, ScoreSelector::MinOfBoth]
                [rng.random_range(0..3)],
            word_limit: rng.random_range(8..=40),
        }
    }

    fn video(rng: &mut StdRng, round: u32) -> VideoRef {
        VideoRef::new(
            format!("videos/clip, \"{round}\".mp4"),
            rng.random_range(1.0..10.0),
            rng.random_range(1..=30),
            rng.random_range(16..=1920),
            rng.random_range(16..=1080),
        )
        .unwrap()
    }

    fn fill(rng: &mut StdRng, record: &mut RoundRecord, upto: usize) {
        let t = |rng: &mut StdRng, r: &mut RoundRecord, key: &str| {
            r.timing_ms.insert(key.to_string(), rng.random_range(0..100_000));
        };
        // outputs appear in the order the engine produces them
        if upto >= 1 {
            record.video = Some(video(rng, record.index));
            t(rng, record, "gen_video");
        }
        if upto >= 2 {
            record.scores = Some(scores(rng));
            t(rng, record, "evaluate");
        }
        if upto >= 3 {
            record.caption = Some(text(rng, 12));
            t(rng, record, "caption");
        }
        if upto >= 4 {
            let objects = (0..rng.random_range(1..4)).map(|_| text(rng, 2)).collect();
            let rules = (0..rng.random_range(1..4)).map(|_| text(rng, 10)).collect();
            record.rule_analysis =
                Some(RuleAnalysis::new(objects, rules, text(rng, 20)).unwrap());
            t(rng, record, "step1");
        }
        if upto >= 5 {
            let mismatches = (0..rng.random_range(0..3))
                .map(|_| Mismatch {
                    aspect: text(rng, 2),
                    prompt_said: text(rng, 5),
                    video_showed: text(rng, 5),
                })
                .collect();
            record.mismatch = Some(MismatchReport {
                mismatches,
                caption: record.caption.clone().unwrap_or_default(),
                raw_reasoner_output: text(rng, 20),
            });
            t(rng, record, "step2");
        }
    }

    /// A session in a state the engine can reach: complete chained rounds,
    /// an optional partial next round, an optional stop reason.
    pub fn session(rng: &mut StdRng) -> RefinementSession {
        let policy = policy(rng);
        let limit = policy.word_limit;
        let mut s = RefinementSession::new(
            format!("sess-{}", rng.random_range(0..1_000_000)),
            prompt(rng, 30),
            policy,
        );
        if rng.random_bool(0.5) {
            s.entry = Some(EntryMeta {
                id: text(rng, 2),
                source: Source::Custom,
                category: Category::ALL[rng.random_range(0..Category::ALL.len())],
            });
        }
        let rounds = rng.random_range(0..=s.policy.max_rounds);
        for index in 1..=rounds {
            let mut record = RoundRecord::new(index, s.next_prompt().clone());
            fill(rng, &mut record, 5);
            record.refined_prompt = Some(prompt(rng, limit));
            record.refined_truncated = rng.random_bool(0.2);
            record
                .timing_ms
                .insert("step3".into(), rng.random_range(0..100_000));
            s.rounds.push(record);
        }
        if rng.random_bool(0.7) {
            let mut record = RoundRecord::new(rounds + 1, s.next_prompt().clone());
            let upto = rng.random_range(1..=5);
            fill(rng, &mut record, upto);
            s.pending = Some(record);
        }
        s.stop_reason = match rng.random_range(0..6) {
            0 => Some(StopReason::Satisfied),
            1 => Some(StopReason::Converged),
            2 => Some(StopReason::RoundCap),
            3 => Some(StopReason::BackendFailure),
            _ => None,
        };
        s
    }
}
