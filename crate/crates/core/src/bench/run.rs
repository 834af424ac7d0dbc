use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use futures::stream::{self, StreamExt};
use serde_json::Value;

use super::{session_id_for, BenchError};
use crate::domain::{DatasetEntry, EntryMeta, RefinementPolicy, RefinementSession};
use crate::engine::Engine;
use crate::ledger::{load_session, LedgerError, NullSink, RoundSink, SessionLedger};

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Maximum sessions in flight. Must be at least 1.
    pub parallelism: usize,
    /// Where session ledgers go. Without it nothing is persisted and nothing
    /// can be resumed.
    pub session_root: Option<PathBuf>,
    /// Stored in each new session's `config.json`.
    pub effective_config: Option<Value>,
    /// Raised to stop starting new rounds; running rounds finish first.
    pub cancel: Option<Arc<AtomicBool>>,
}

/// Session start and end markers, in the order they happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BenchEvent {
    Start(String),
    End(String),
}

/// What happened to one dataset entry.
#[derive(Debug, Clone)]
pub struct EntryOutcome {
    pub entry_id: String,
    pub session_id: String,
    /// Missing only when the session could not even be created or loaded.
    pub session: Option<RefinementSession>,
    pub error: Option<String>,
    /// The session was already finished in the session root.
    pub skipped: bool,
}

impl EntryOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.session.is_some()
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchRun {
    /// One per entry, in input order.
    pub outcomes: Vec<EntryOutcome>,
    pub events: Vec<BenchEvent>,
}

impl BenchRun {
    pub fn sessions(&self) -> Vec<RefinementSession> {
        self.outcomes
            .iter()
            .filter_map(|o| o.session.clone())
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.succeeded()).count()
    }

    /// Highest number of sessions running at the same time.
    pub fn max_in_flight(&self) -> usize {
        let mut now = 0usize;
        let mut max = 0;
        for e in &self.events {
            match e {
                BenchEvent::Start(_) => {
                    now += 1;
                    max = max.max(now);
                }
                BenchEvent::End(_) => now -= 1,
            }
        }
        max
    }
}

/// Runs one session per entry with at most `parallelism` in flight, keeping
/// input order in the result. With a session root, finished sessions found
/// there are returned without any backend call and interrupted or failed
/// ones are resumed. A failing entry never stops the others.
pub async fn run_benchmark(
    engine: &Engine,
    entries: &[DatasetEntry],
    policy: &RefinementPolicy,
    options: &BenchOptions,
) -> Result<BenchRun, BenchError> {
    if options.parallelism < 1 {
        return Err(BenchError::InvalidParallelism);
    }
    policy.validate()?;
    let events = Mutex::new(Vec::new());
    let outcomes = stream::iter(entries)
        .map(|entry| {
            let events = &events;
            async move {
                let id = session_id_for(entry);
                events.lock().unwrap().push(BenchEvent::Start(id.clone()));
                let outcome = run_entry(engine, entry, &id, policy, options).await;
                events.lock().unwrap().push(BenchEvent::End(id));
                outcome
            }
        })
        .buffered(options.parallelism)
        .collect::<Vec<_>>()
        .await;
    Ok(BenchRun {
        outcomes,
        events: events.into_inner().unwrap(),
    })
}

async fn run_entry(
    engine: &Engine,
    entry: &DatasetEntry,
    session_id: &str,
    policy: &RefinementPolicy,
    options: &BenchOptions,
) -> EntryOutcome {
    let mut outcome = EntryOutcome {
        entry_id: entry.id.clone(),
        session_id: session_id.to_string(),
        session: None,
        error: None,
        skipped: false,
    };
    let prepared = match &options.session_root {
        None => Ok((fresh_session(entry, session_id, policy), None)),
        Some(root) => prepare(root, entry, session_id, policy, options),
    };
    let (mut session, ledger) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::error!("{session_id}: {e}");
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    if session.is_finished() {
        log::info!("{session_id}: already finished ({:?}), skipping", session.stop_reason);
        outcome.skipped = true;
        outcome.session = Some(session);
        return outcome;
    }
    let mut null = NullSink;
    let mut ledger = ledger;
    let sink: &mut (dyn RoundSink + Send) = match ledger.as_mut() {
        Some(l) => l,
        None => &mut null,
    };
    let cancel = options.cancel.as_deref();
    if let Err(e) = engine.run(&mut session, sink, cancel).await {
        log::warn!("{session_id}: {e}");
        outcome.error = Some(e.to_string());
    }
    outcome.session = Some(session);
    outcome
}

fn fresh_session(
    entry: &DatasetEntry,
    session_id: &str,
    policy: &RefinementPolicy,
) -> RefinementSession {
    let mut session = RefinementSession::new(session_id, entry.prompt.clone(), policy.clone());
    session.entry = Some(EntryMeta {
        id: entry.id.clone(),
        source: entry.source,
        category: entry.category,
    });
    session
}

fn prepare(
    root: &std::path::Path,
    entry: &DatasetEntry,
    session_id: &str,
    policy: &RefinementPolicy,
    options: &BenchOptions,
) -> Result<(RefinementSession, Option<SessionLedger>), LedgerError> {
    match load_session(root, session_id) {
        Ok(session) => {
            if session.original_prompt != entry.prompt {
                return Err(LedgerError::InvalidRow(format!(
                    "existing session '{session_id}' was started from a different prompt"
                )));
            }
            if session.is_finished() {
                return Ok((session, None));
            }
            let ledger = SessionLedger::open(root, session_id)?;
            Ok((session, Some(ledger)))
        }
        Err(LedgerError::UnknownSession(_)) => {
            let session = fresh_session(entry, session_id, policy);
            let ledger = SessionLedger::create(root, &session, options.effective_config.clone())?;
            Ok((session, Some(ledger)))
        }
        Err(e) => Err(e),
    }
}
