use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{Category, DatasetEntry, PromptText, Source};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Schema { line: u64, reason: String },
    #[error("cannot tell the format of {0}; use a .jsonl or .csv file or pass the format")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(DatasetFormat::Jsonl),
            "csv" => Some(DatasetFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    id: Option<String>,
    prompt: Option<String>,
    source: Option<String>,
    category: Option<String>,
}

fn schema(line: u64, reason: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        line,
        reason: reason.into(),
    }
}

fn required(value: Option<String>, field: &str, line: u64) -> Result<String, DatasetError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(schema(line, format!("missing '{field}'"))),
    }
}

/// Entries so far, rejecting ids that map to an already used session id.
#[derive(Default)]
struct Collector {
    entries: Vec<DatasetEntry>,
    seen: HashSet<String>,
}

impl Collector {
    fn push(&mut self, raw: RawEntry, line: u64) -> Result<(), DatasetError> {
        let entry = to_entry(raw, line)?;
        if !self.seen.insert(session_id_for(&entry)) {
            return Err(schema(line, format!("duplicate id '{}'", entry.id)));
        }
        self.entries.push(entry);
        Ok(())
    }
}

fn to_entry(raw: RawEntry, line: u64) -> Result<DatasetEntry, DatasetError> {
    let id = required(raw.id, "id", line)?;
    let prompt = required(raw.prompt, "prompt", line)?;
    let source = required(raw.source, "source", line)?;
    let source: Source = source.trim().parse().map_err(|_| {
        schema(
            line,
            format!("unknown source '{source}' (expected videophy, phygenbench or custom)"),
        )
    })?;
    let category = match raw.category.as_deref().map(str::trim) {
        None | Some("") => Category::Uncategorized,
        Some(text) => text.parse().unwrap_or_else(|_| {
            log::warn!("line {line}: unknown category '{text}', using uncategorized");
            Category::Uncategorized
        }),
    };
    let prompt = PromptText::new(prompt).map_err(|e| schema(line, e.to_string()))?;
    DatasetEntry::new(id.trim(), prompt, source, category).map_err(|e| schema(line, e.to_string()))
}

/// Parses JSON Lines: one object per line with `id`, `prompt`, `source` and
/// optionally `category`. Blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<DatasetEntry>, DatasetError> {
    let mut out = Collector::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line)
            .map_err(|e| schema(lineno, format!("not a JSON object: {e}")))?;
        out.push(raw, lineno)?;
    }
    Ok(out.entries)
}

/// Parses CSV with a header row naming `id`, `prompt`, `source` and
/// optionally `category`, in any order.
pub fn parse_csv(text: &str) -> Result<Vec<DatasetEntry>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| schema(1, format!("unreadable header: {e}")))?
        .clone();
    let mut out = Collector::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            schema(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let raw: RawEntry = record
            .deserialize(Some(&headers))
            .map_err(|e| schema(line, e.to_string()))?;
        out.push(raw, line)?;
    }
    Ok(out.entries)
}

/// Reads a dataset file. The format comes from the extension unless given.
/// Entry ids must be unique after [`session_id_for`] sanitizing.
pub fn load_dataset(
    path: &Path,
    format: Option<DatasetFormat>,
) -> Result<Vec<DatasetEntry>, DatasetError> {
    let format = format
        .or_else(|| DatasetFormat::from_path(path))
        .ok_or_else(|| DatasetError::UnknownFormat(path.display().to_string()))?;
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    match format {
        DatasetFormat::Jsonl => parse_jsonl(&text),
        DatasetFormat::Csv => parse_csv(&text),
    }
}

/// Session id used for a dataset entry: its id with anything other than
/// letters, digits, '-', '_' and '.' replaced by '_'.
pub fn session_id_for(entry: &DatasetEntry) -> String {
    let id: String = entry
        .id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match id.as_str() {
        "." | ".." => id.replace('.', "_"),
        _ => id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_unknown_category_falls_back() {
        let text = r#"{"id":"a","prompt":"ice melts","source":"phygenbench","category":"acoustics"}"#;
        let entries = parse_jsonl(text).unwrap();
        assert_eq!(entries[0].category, Category::Uncategorized);
    }

    #[test]
    fn jsonl_category_must_fit_source() {
        let text = r#"{"id":"a","prompt":"ice melts","source":"videophy","category":"thermal"}"#;
        let err = parse_jsonl(text).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 1, .. }), "{err}");
    }

    #[test]
    fn csv_reports_data_line() {
        let text = "id,prompt,source,category\na,one,custom,optics\nb,,custom,optics\n";
        match parse_csv(text).unwrap_err() {
            DatasetError::Schema { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("prompt"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn sanitized_ids() {
        let e = DatasetEntry::new(
            "set/1 a",
            PromptText::new("x").unwrap(),
            Source::Custom,
            Category::Optics,
        )
        .unwrap();
        assert_eq!(session_id_for(&e), "set_1_a");
    }
}
