use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{apply_event, LedgerError, LedgerEvent, LedgerStep};
use crate::domain::{EntryMeta, PromptText, RefinementPolicy, RefinementSession};

pub const CSV_HEADER: [&str; 5] = ["session_id", "round", "step", "timestamp", "payload"];

const CONFIG_FILE: &str = "config.json";
const LEDGER_FILE: &str = "ledger.csv";

/// One CSV record.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub session_id: String,
    pub round: u32,
    pub step: LedgerStep,
    /// RFC 3339 UTC.
    pub timestamp: String,
    /// JSON object.
    pub payload: String,
}

impl LedgerRow {
    pub fn new(session_id: &str, round: u32, event: &LedgerEvent) -> Self {
        Self {
            session_id: session_id.to_string(),
            round,
            step: event.step(),
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            payload: event.payload(),
        }
    }

    /// The record as RFC 4180 bytes, CRLF-terminated.
    pub fn encode(&self) -> Result<Vec<u8>, LedgerError> {
        let round = self.round.to_string();
        encode_record(&[
            self.session_id.as_str(),
            round.as_str(),
            self.step.as_str(),
            self.timestamp.as_str(),
            self.payload.as_str(),
        ])
    }
}

fn encode_record(fields: &[&str]) -> Result<Vec<u8>, LedgerError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(fields)
        .map_err(|e| LedgerError::InvalidRow(e.to_string()))?;
    w.into_inner()
        .map_err(|e| LedgerError::InvalidRow(e.to_string()))
}

/// Where ledger bytes go. The file implementation is the only one used in
/// production; tests substitute failing targets.
#[allow(clippy::len_without_is_empty)]
pub trait AppendTarget: Send {
    fn len(&mut self) -> io::Result<u64>;
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn truncate(&mut self, len: u64) -> io::Result<()>;
    fn sync(&mut self) -> io::Result<()>;
}

pub struct FileTarget {
    file: File,
}

impl FileTarget {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }
}

impl AppendTarget for FileTarget {
    fn len(&mut self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)?;
        self.file.flush()
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }
}

/// Receives every step outcome of a running session.
pub trait RoundSink: Send {
    fn record(&mut self, round: u32, event: &LedgerEvent) -> Result<(), LedgerError>;

    /// Directory local video backends should write into.
    fn video_dir(&self) -> Option<PathBuf> {
        None
    }
}

/// Discards everything. For runs that need no persistence.
pub struct NullSink;

impl RoundSink for NullSink {
    fn record(&mut self, _round: u32, _event: &LedgerEvent) -> Result<(), LedgerError> {
        Ok(())
    }
}

/// Contents of `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfigFile {
    pub session_id: String,
    pub original_prompt: PromptText,
    pub policy: RefinementPolicy,
    #[serde(default)]
    pub entry: Option<EntryMeta>,
    /// Whatever the caller wants to remember about how the session was run.
    #[serde(default)]
    pub effective_config: Option<Value>,
}

impl SessionConfigFile {
    pub fn read(root: &Path, session_id: &str) -> Result<Self, LedgerError> {
        let path = root.join(session_id).join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => LedgerError::UnknownSession(session_id.to_string()),
            _ => LedgerError::Storage(format!("{}: {e}", path.display())),
        })?;
        serde_json::from_str(&text).map_err(|e| LedgerError::Corrupt {
            row: 0,
            reason: format!("{CONFIG_FILE}: {e}"),
        })
    }
}

fn check_session_id(id: &str) -> Result<(), LedgerError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(LedgerError::InvalidRow(format!(
            "session id '{id}' must be non-empty and use only letters, digits, '-', '_' and '.'"
        )))
    }
}

/// Writer for one session directory.
pub struct SessionLedger {
    dir: PathBuf,
    session_id: String,
    target: Box<dyn AppendTarget>,
    last: Option<(u32, LedgerStep)>,
}

impl SessionLedger {
    /// Creates the session directory, `config.json` and an empty ledger.
    pub fn create(
        root: &Path,
        session: &RefinementSession,
        effective_config: Option<Value>,
    ) -> Result<Self, LedgerError> {
        check_session_id(&session.session_id)?;
        let dir = root.join(&session.session_id);
        let ledger_path = dir.join(LEDGER_FILE);
        if ledger_path.exists() {
            return Err(LedgerError::Storage(format!(
                "session '{}' already exists in {}",
                session.session_id,
                root.display()
            )));
        }
        fs::create_dir_all(dir.join("rounds"))?;
        fs::create_dir_all(dir.join("videos"))?;
        let config = SessionConfigFile {
            session_id: session.session_id.clone(),
            original_prompt: session.original_prompt.clone(),
            policy: session.policy.clone(),
            entry: session.entry.clone(),
            effective_config,
        };
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        fs::write(dir.join(CONFIG_FILE), text)?;

        let mut file = File::create(&ledger_path)?;
        file.write_all(&encode_record(&CSV_HEADER)?)?;
        file.sync_all()?;
        drop(file);
        Self::open(root, &session.session_id)
    }

    /// Opens an existing session for appending.
    pub fn open(root: &Path, session_id: &str) -> Result<Self, LedgerError> {
        check_session_id(session_id)?;
        let dir = root.join(session_id);
        let ledger_path = dir.join(LEDGER_FILE);
        if !ledger_path.is_file() {
            return Err(LedgerError::UnknownSession(session_id.to_string()));
        }
        Ok(Self {
            target: Box::new(FileTarget::open(&ledger_path)?),
            dir,
            session_id: session_id.to_string(),
            last: None,
        })
    }

    /// Replaces the byte sink, keeping everything else.
    pub fn with_target(mut self, target: Box<dyn AppendTarget>) -> Self {
        self.target = target;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Appends one row and syncs it to disk. On any write failure the file is
    /// cut back to its previous length, so no partial row is left behind.
    pub fn append(&mut self, row: &LedgerRow) -> Result<(), LedgerError> {
        if row.session_id != self.session_id {
            return Err(LedgerError::InvalidRow(format!(
                "row for session '{}' in ledger of '{}'",
                row.session_id, self.session_id
            )));
        }
        if let Err(e) = serde_json::from_str::<serde_json::Map<String, Value>>(&row.payload) {
            return Err(LedgerError::InvalidRow(format!("payload is not a JSON object: {e}")));
        }
        if let Some((last_round, last_step)) = self.last {
            if (row.round, row.step.rank()) < (last_round, last_step.rank()) {
                return Err(LedgerError::OutOfOrder {
                    round: row.round,
                    step: row.step,
                    last_round,
                    last_step,
                });
            }
        }
        let bytes = row.encode()?;
        let before = self.target.len()?;
        let written = self
            .target
            .append(&bytes)
            .and_then(|_| self.target.sync());
        if let Err(e) = written {
            if let Err(cut) = self.target.truncate(before) {
                log::error!("cannot roll back partial ledger row: {cut}");
            }
            return Err(LedgerError::Storage(e.to_string()));
        }
        self.last = Some((row.round, row.step));
        Ok(())
    }

    fn write_artifact(&self, round: u32, event: &LedgerEvent) -> io::Result<()> {
        let (name, content) = match event {
            LedgerEvent::GenVideo(p) => ("prompt.txt", p.prompt.as_str().to_string()),
            LedgerEvent::Evaluate(p) => ("scores.json", pretty(&p.scores)),
            LedgerEvent::Step1(p) => ("step1.json", pretty(&p.rule_analysis)),
            LedgerEvent::Step2(p) => ("step2.json", pretty(&p.mismatch)),
            LedgerEvent::Step3(p) => ("step3.json", pretty(p)),
            LedgerEvent::Caption(_) | LedgerEvent::Stop(_) => return Ok(()),
        };
        let dir = self.dir.join("rounds").join(round.to_string());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(name), content)
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes")
}

impl RoundSink for SessionLedger {
    fn record(&mut self, round: u32, event: &LedgerEvent) -> Result<(), LedgerError> {
        self.append(&LedgerRow::new(&self.session_id, round, event))?;
        self.write_artifact(round, event)
            .map_err(|e| LedgerError::Storage(format!("round {round} artifact: {e}")))
    }

    fn video_dir(&self) -> Option<PathBuf> {
        Some(self.dir.join("videos"))
    }
}

fn corrupt(row: u64, reason: impl Into<String>) -> LedgerError {
    LedgerError::Corrupt {
        row,
        reason: reason.into(),
    }
}

/// Rebuilds a session from its directory. Row numbers in errors count data
/// rows from 1, not counting the header.
///
/// A final row without its line terminator is the remains of an interrupted
/// write and is ignored.
pub fn load_session(root: &Path, session_id: &str) -> Result<RefinementSession, LedgerError> {
    check_session_id(session_id).map_err(|_| LedgerError::UnknownSession(session_id.into()))?;
    let ledger_path = root.join(session_id).join(LEDGER_FILE);
    if !ledger_path.is_file() {
        return Err(LedgerError::UnknownSession(session_id.to_string()));
    }
    let config = SessionConfigFile::read(root, session_id)?;
    if config.session_id != session_id {
        return Err(corrupt(
            0,
            format!("{CONFIG_FILE} names session '{}'", config.session_id),
        ));
    }
    let mut session = RefinementSession::new(
        config.session_id,
        config.original_prompt,
        config.policy,
    );
    session.entry = config.entry;

    let bytes = fs::read(&ledger_path)?;
    let torn = !bytes.is_empty() && !bytes.ends_with(b"\n");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let header = reader
        .headers()
        .map_err(|e| corrupt(0, format!("unreadable header: {e}")))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(corrupt(0, "unexpected header"));
    }

    let mut records: Vec<_> = reader.records().collect();
    if torn && records.pop().is_some() {
        log::warn!("{}: ignoring incomplete final row", ledger_path.display());
    }

    for (i, record) in records.into_iter().enumerate() {
        let row = i as u64 + 1;
        let record = record.map_err(|e| corrupt(row, e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or_default();
        if field(0) != session_id {
            return Err(corrupt(row, format!("row belongs to session '{}'", field(0))));
        }
        let round: u32 = field(1)
            .parse()
            .map_err(|_| corrupt(row, format!("bad round '{}'", field(1))))?;
        let step: LedgerStep = field(2).parse().map_err(|e: String| corrupt(row, e))?;
        DateTime::parse_from_rfc3339(field(3))
            .map_err(|e| corrupt(row, format!("bad timestamp '{}': {e}", field(3))))?;
        let event = LedgerEvent::decode(step, field(4))
            .map_err(|e| corrupt(row, format!("bad {step} payload: {e}")))?;
        apply_event(&mut session, round, &event).map_err(|e| corrupt(row, e.to_string()))?;
    }
    Ok(session)
}

/// Ids of every session directory under `root` that has a ledger, sorted.
pub fn list_sessions(root: &Path) -> Result<Vec<String>, LedgerError> {
    let mut ids = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ids),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        if entry.path().join(LEDGER_FILE).is_file() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
