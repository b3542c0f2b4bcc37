//! Line-oriented JSON reading and writing with line-numbered errors.
//!
//! Every pipeline artifact is UTF-8 JSONL with LF line endings; blank lines
//! are ignored on read and never produced on write.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

/// Read a whole JSONL file into memory.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    Ok(read_jsonl_numbered(path)?
        .into_iter()
        .map(|(_, record)| record)
        .collect())
}

/// Read a JSONL file keeping each record's 1-based line number, for
/// validation messages that point at the offending line.
pub fn read_jsonl_numbered<T: DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, JsonlError> {
    let file = fs::File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((i + 1, record));
    }
    Ok(records)
}

/// Write records as JSONL atomically: serialize to a temp file in the target
/// directory, then rename over the destination.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        tmp.write_all(line.as_bytes()).map_err(io_err)?;
        tmp.write_all(b"\n").map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| JsonlError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: String,
        n: u32,
    }

    #[test]
    fn round_trips_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records = vec![
            Rec { id: "a".into(), n: 1 },
            Rec { id: "b".into(), n: 2 },
        ];
        write_jsonl(&path, &records).unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"n\":1}\nnot json\n").unwrap();
        let err = read_jsonl::<Rec>(&path).unwrap_err();
        match err {
            JsonlError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn blank_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaps.jsonl");
        fs::write(&path, "\n{\"id\":\"a\",\"n\":1}\n\n").unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
    }
}
