//! Newline-delimited JSON for preference pairs and instruction corpora.

use std::io::{self, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{InstructionSample, PreferencePair};

/// A record type that can be checked before it is written or after it is read.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<()>;
}

impl JsonlRecord for PreferencePair {
    fn validate(&self) -> Result<()> {
        PreferencePair::validate(self)
    }
}

impl JsonlRecord for InstructionSample {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Invariant {
                field: "id",
                message: "must be non-empty".into(),
            });
        }
        Ok(())
    }
}

/// Writes one compact JSON object per record, each terminated by `\n`.
///
/// Every record is validated first; nothing is written if any record fails.
pub fn write_jsonl<T: JsonlRecord, W: Write>(records: &[T], mut out: W) -> Result<()> {
    for (idx, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
    }
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn encode_jsonl<T: JsonlRecord>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf)?;
    Ok(buf)
}

/// Decodes a JSONL byte stream, failing on the first bad line.
///
/// Blank lines are skipped. Line numbers are 1-based.
pub fn decode_jsonl<T: JsonlRecord>(bytes: &[u8]) -> Result<Vec<T>> {
    let (records, mut failures) = decode_jsonl_lenient(bytes);
    if failures.is_empty() {
        Ok(records)
    } else {
        Err(failures.swap_remove(0))
    }
}

/// Decodes every well-formed line and reports the failing ones separately.
pub fn decode_jsonl_lenient<T: JsonlRecord>(bytes: &[u8]) -> (Vec<T>, Vec<Error>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let parsed = std::str::from_utf8(raw)
            .map_err(|e| format!("invalid UTF-8: {e}"))
            .and_then(|s| serde_json::from_str::<T>(s).map_err(|e| format!("malformed JSON: {e}")))
            .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => failures.push(Error::Line { line, message }),
        }
    }
    (records, failures)
}

pub fn read_jsonl_file<T: JsonlRecord>(path: &std::path::Path) -> Result<Vec<T>> {
    let bytes = std::fs::read(path)?;
    decode_jsonl(&bytes)
}

pub fn write_jsonl_file<T: JsonlRecord>(records: &[T], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_jsonl(records, io::BufWriter::new(file))
}
