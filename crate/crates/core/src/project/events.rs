//! Event vocabulary and the append-only line-delimited JSON log.
//!
//! Each command appends its events followed by a `commit` record. Recovery
//! keeps only whole transactions: a torn final line and any events after the
//! last commit are truncated away.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::aggregate::Judgment;
use crate::corpus::{TokenId, UniversalTag};
use crate::qc::PageItem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    ProjectCreated {
        inputs_digest: String,
        at: i64,
    },
    WorkerRegistered {
        worker_id: String,
        locale: String,
        spanish_certified: bool,
        at: i64,
    },
    ScreeningGraded {
        worker_id: String,
        wrong: usize,
        passed: bool,
        at: i64,
    },
    PageIssued {
        page_id: String,
        worker_id: String,
        items: Vec<PageItem>,
        price_cents: u32,
        issued_at: i64,
        expires_at: i64,
    },
    PageExpired {
        page_id: String,
        at: i64,
    },
    PageSubmitted {
        page_id: String,
        worker_id: String,
        at: i64,
    },
    Judgment(Judgment),
    TestGraded {
        worker_id: String,
        token_id: TokenId,
        correct: bool,
        at: i64,
    },
    WorkerBanned {
        worker_id: String,
        by: String,
        at: i64,
    },
    TieResolved {
        token_id: TokenId,
        tag: UniversalTag,
        expert_id: String,
        at: i64,
    },
    ManualTagged {
        token_id: TokenId,
        tag: UniversalTag,
        expert_id: String,
        at: i64,
    },
    Commit {
        txn: u64,
    },
}

impl Event {
    pub fn at(&self) -> Option<i64> {
        match self {
            Event::ProjectCreated { at, .. }
            | Event::WorkerRegistered { at, .. }
            | Event::ScreeningGraded { at, .. }
            | Event::PageExpired { at, .. }
            | Event::PageSubmitted { at, .. }
            | Event::TestGraded { at, .. }
            | Event::WorkerBanned { at, .. }
            | Event::TieResolved { at, .. }
            | Event::ManualTagged { at, .. } => Some(*at),
            Event::PageIssued { issued_at, .. } => Some(*issued_at),
            Event::Judgment(j) => Some(j.submitted_at),
            Event::Commit { .. } => None,
        }
    }
}

/// One committed transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub txn: u64,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct Recovered {
    pub transactions: Vec<Transaction>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Lines past the committed prefix that were discarded.
    pub discarded_lines: usize,
}

/// Reads the committed prefix of a log. A malformed line is tolerated only
/// as the very last line (a torn write).
pub fn read_log(path: &Path) -> Result<Recovered, LogError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut transactions = Vec::new();
    let mut pending = Vec::new();
    let mut offset = 0u64;
    let mut committed_len = 0u64;
    let mut pending_lines = 0usize;
    let mut line_no = 0usize;
    let mut buf = String::new();
    let mut torn = false;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if torn {
            return Err(LogError::Corrupt {
                line: line_no - 1,
                message: "malformed record before end of log".into(),
            });
        }
        offset += n as u64;
        if !buf.ends_with('\n') {
            torn = true;
            pending_lines += 1;
            continue;
        }
        match serde_json::from_str::<Event>(buf.trim_end()) {
            Ok(Event::Commit { txn }) => {
                let expected = transactions.len() as u64 + 1;
                if txn != expected {
                    return Err(LogError::Corrupt {
                        line: line_no,
                        message: format!("commit {txn} out of sequence, expected {expected}"),
                    });
                }
                transactions.push(Transaction {
                    txn,
                    events: std::mem::take(&mut pending),
                });
                committed_len = offset;
                pending_lines = 0;
            }
            Ok(event) => {
                pending.push(event);
                pending_lines += 1;
            }
            Err(_) => {
                torn = true;
                pending_lines += 1;
            }
        }
    }
    Ok(Recovered {
        transactions,
        committed_len,
        discarded_lines: pending_lines,
    })
}

/// Append handle on an on-disk event log.
pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
    txn: u64,
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        Ok(EventLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            txn: 0,
        })
    }

    /// Opens an existing log, truncating any uncommitted tail.
    pub fn open(path: &Path) -> Result<(Self, Vec<Transaction>), LogError> {
        let recovered = read_log(path)?;
        if recovered.discarded_lines > 0 {
            warn!(
                "{}: discarding {} uncommitted line(s)",
                path.display(),
                recovered.discarded_lines
            );
        }
        let mut file = OpenOptions::new().write(true).open(path)?;
        file.set_len(recovered.committed_len)?;
        file.seek(SeekFrom::End(0))?;
        let txn = recovered.transactions.len() as u64;
        Ok((
            EventLog {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
                txn,
            },
            recovered.transactions,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn txn(&self) -> u64 {
        self.txn
    }

    /// Writes the events and a commit record, then flushes.
    pub fn append(&mut self, events: &[Event]) -> Result<u64, LogError> {
        let txn = self.txn + 1;
        for e in events.iter().chain(std::iter::once(&Event::Commit { txn })) {
            serde_json::to_writer(&mut self.out, e).map_err(std::io::Error::from)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        self.txn = txn;
        Ok(txn)
    }
}

/// Where committed transactions go.
pub enum LogTarget {
    /// Nothing is kept; used for large in-process simulations.
    Discard,
    Memory(Vec<String>),
    File(EventLog),
}

impl LogTarget {
    pub fn append(&mut self, txn: u64, events: &[Event]) -> Result<(), LogError> {
        match self {
            LogTarget::Discard => Ok(()),
            LogTarget::Memory(lines) => {
                for e in events.iter().chain(std::iter::once(&Event::Commit { txn })) {
                    lines.push(serde_json::to_string(e).map_err(std::io::Error::from)?);
                }
                Ok(())
            }
            LogTarget::File(log) => {
                let written = log.append(events)?;
                debug_assert_eq!(written, txn);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::JudgmentSource;

    fn judgment(i: u64) -> Event {
        Event::Judgment(Judgment {
            judgment_id: format!("c{i:010}"),
            token_id: "u1:0".into(),
            worker_id: "w1".into(),
            tag: UniversalTag::Noun,
            source: JudgmentSource::Crowd,
            valid: true,
            submitted_at: i as i64,
        })
    }

    #[test]
    fn judgment_record_is_flat() {
        let line = serde_json::to_string(&judgment(1)).unwrap();
        assert!(line.starts_with(r#"{"type":"judgment","judgment_id":"c0000000001""#));
        let back: Event = serde_json::from_str(&line).unwrap();
        assert_eq!(back, judgment(1));
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&[judgment(1)]).unwrap();
        log.append(&[judgment(2), judgment(3)]).unwrap();
        drop(log);
        let good_len = std::fs::metadata(&path).unwrap().len();

        // An uncommitted event plus half a line.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{}", serde_json::to_string(&judgment(4)).unwrap()).unwrap();
        write!(f, "{{\"type\":\"judgm").unwrap();
        drop(f);

        let recovered = read_log(&path).unwrap();
        assert_eq!(recovered.transactions.len(), 2);
        assert_eq!(recovered.transactions[1].events.len(), 2);
        assert_eq!(recovered.discarded_lines, 2);

        let (mut log, txns) = EventLog::open(&path).unwrap();
        assert_eq!(txns.len(), 2);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
        assert_eq!(log.append(&[judgment(5)]).unwrap(), 3);
        assert_eq!(read_log(&path).unwrap().transactions.len(), 3);
    }

    #[test]
    fn corruption_mid_log_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, "garbage\n{\"type\":\"commit\",\"txn\":1}\n").unwrap();
        assert!(matches!(read_log(&path), Err(LogError::Corrupt { line: 1, .. })));
    }
}
