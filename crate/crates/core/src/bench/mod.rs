//! Benchmark datasets, batched sessions, and PC/SA aggregation into report
//! tables.

mod dataset;
mod report;
mod run;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{AggregateReport, Category, DomainError, MetricSummary, RefinementSession};

pub use dataset::{load_dataset, parse_csv, parse_jsonl, session_id_for, DatasetError, DatasetFormat};
pub use report::{render_report, render_round_table, ReportStyle};
pub use run::{run_benchmark, BenchEvent, BenchOptions, BenchRun, EntryOutcome};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("no sessions to aggregate")]
    EmptyCohort,
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error(transparent)]
    Policy(#[from] DomainError),
}

pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Default)]
struct Tally {
    pc_hits: usize,
    sa_hits: usize,
    n: usize,
}

impl Tally {
    fn summary(&self) -> MetricSummary {
        let mean = |hits: usize| {
            if self.n == 0 {
                0.0
            } else {
                hits as f64 / self.n as f64
            }
        };
        MetricSummary {
            mean_pc: mean(self.pc_hits),
            mean_sa: mean(self.sa_hits),
            n: self.n,
        }
    }
}

/// Binarizes each session's round-`round` PC and SA at `threshold`
/// (score >= threshold counts 1) and averages them, overall and per
/// category. Sessions without a completed round `round` are left out and
/// counted in `excluded`; if that leaves nothing, the summaries have `n = 0`.
pub fn aggregate(
    sessions: &[RefinementSession],
    round: u32,
    threshold: f64,
) -> Result<AggregateReport, BenchError> {
    if sessions.is_empty() {
        return Err(BenchError::EmptyCohort);
    }
    let mut overall = Tally::default();
    let mut by_category: BTreeMap<Category, Tally> = BTreeMap::new();
    let mut excluded = 0;
    for session in sessions {
        let Some(scores) = session.round(round).and_then(|r| r.scores) else {
            excluded += 1;
            continue;
        };
        let pc = (scores.pc() >= threshold) as usize;
        let sa = (scores.sa() >= threshold) as usize;
        for tally in [&mut overall, by_category.entry(session.category()).or_default()] {
            tally.pc_hits += pc;
            tally.sa_hits += sa;
            tally.n += 1;
        }
    }
    Ok(AggregateReport {
        per_round: BTreeMap::from([(round, overall.summary())]),
        per_category: by_category
            .into_iter()
            .map(|(c, t)| (c, t.summary()))
            .collect(),
        binarize_threshold: threshold,
        excluded,
    })
}
