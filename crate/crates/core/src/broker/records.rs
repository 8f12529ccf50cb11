//! Append-only learning-record log, one JSON object per line.
//!
//! Appends are queued to a writer thread so that relays never wait on disk.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::Mutex;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{GroupId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Chat,
    Control,
    Measurement,
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRecord {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub group: GroupId,
    pub user: UserId,
    pub kind: RecordKind,
    pub detail: String,
    /// Group sequence number of the relay this record describes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u32>,
}

#[derive(Debug, Error)]
#[error("STORAGE_FAILURE: {path}: {source}")]
pub struct StorageFailure {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

enum Command {
    Append(LearningRecord),
    Flush(SyncSender<()>),
}

/// Handle to the record writer. Cheap to share behind an `Arc`.
pub struct RecordLog {
    tx: Mutex<Option<Sender<Command>>>,
    writer: Mutex<Option<JoinHandle<()>>>,
}

impl RecordLog {
    /// Open `path` for appending, creating it if needed. Prior records are
    /// kept.
    pub fn open(path: impl AsRef<Path>) -> Result<RecordLog, StorageFailure> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| StorageFailure {
                path: path.clone(),
                source,
            })?;
        let (tx, rx) = mpsc::channel();
        let writer = std::thread::Builder::new()
            .name("record-log".into())
            .spawn(move || write_loop(file, path, rx))
            .expect("spawn record writer");
        Ok(RecordLog {
            tx: Mutex::new(Some(tx)),
            writer: Mutex::new(Some(writer)),
        })
    }

    /// A log that drops everything.
    pub fn disabled() -> RecordLog {
        RecordLog {
            tx: Mutex::new(None),
            writer: Mutex::new(None),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.tx.lock().unwrap().is_some()
    }

    /// Queue a record. Never blocks on I/O.
    pub fn append(&self, rec: LearningRecord) {
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(Command::Append(rec));
        }
    }

    /// Wait until everything queued so far is on disk.
    pub fn flush(&self) {
        let (ack_tx, ack_rx) = mpsc::sync_channel(1);
        let sent = match self.tx.lock().unwrap().as_ref() {
            Some(tx) => tx.send(Command::Flush(ack_tx)).is_ok(),
            None => false,
        };
        if sent {
            let _ = ack_rx.recv();
        }
    }

    /// Drain the queue and stop the writer. Later appends are dropped.
    pub fn close(&self) {
        drop(self.tx.lock().unwrap().take());
        if let Some(handle) = self.writer.lock().unwrap().take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RecordLog {
    fn drop(&mut self) {
        self.close();
    }
}

fn write_loop(file: File, path: PathBuf, rx: Receiver<Command>) {
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, rec: &LearningRecord| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(out, "{line}") {
            tracing::warn!(path = %path.display(), error = %e, "STORAGE_FAILURE: record dropped");
        }
    };
    let sync = |out: &mut BufWriter<File>| {
        if let Err(e) = out.flush().and_then(|_| out.get_ref().sync_data()) {
            tracing::warn!(error = %e, "STORAGE_FAILURE: flush failed");
        }
    };
    while let Ok(cmd) = rx.recv() {
        let mut acks = Vec::new();
        let mut next = Some(cmd);
        while let Some(cmd) = next {
            match cmd {
                Command::Append(rec) => write(&mut out, &rec),
                Command::Flush(ack) => acks.push(ack),
            }
            next = rx.try_recv().ok();
        }
        sync(&mut out);
        for ack in acks {
            let _ = ack.send(());
        }
    }
    sync(&mut out);
}

#[derive(Debug, Error)]
pub enum ReadRecordsError {
    #[error("reading records: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Parse a record log back into memory.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<LearningRecord>, ReadRecordsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let rec = serde_json::from_str(&line).map_err(|source| ReadRecordsError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chat(ts: u64, text: &str) -> LearningRecord {
        LearningRecord {
            ts,
            group: 2,
            user: 5,
            kind: RecordKind::Chat,
            detail: text.to_string(),
            seq: Some(1),
        }
    }

    #[test]
    fn line_format() {
        let line = serde_json::to_string(&chat(17, "hello")).unwrap();
        assert_eq!(
            line,
            r#"{"ts":17,"group":2,"user":5,"kind":"chat","detail":"hello","seq":1}"#
        );
        let join = LearningRecord {
            kind: RecordKind::Join,
            seq: None,
            ..chat(1, "ann")
        };
        assert_eq!(
            serde_json::to_string(&join).unwrap(),
            r#"{"ts":1,"group":2,"user":5,"kind":"join","detail":"ann"}"#
        );
    }

    #[test]
    fn appends_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let log = RecordLog::open(&path).unwrap();
        log.append(chat(1, "hello"));
        log.close();
        let log = RecordLog::open(&path).unwrap();
        log.append(chat(2, "again"));
        log.flush();
        let recs = read_records(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].detail, "hello");
        assert_eq!(recs[1].detail, "again");
    }

    #[test]
    fn unwritable_path_fails_to_open() {
        let dir = tempfile::tempdir().unwrap();
        let err = RecordLog::open(dir.path().join("missing/dir/r.jsonl"))
            .err()
            .unwrap();
        assert!(err.to_string().starts_with("STORAGE_FAILURE"));
    }

    #[test]
    fn disabled_log_accepts_and_drops() {
        let log = RecordLog::disabled();
        assert!(!log.is_enabled());
        log.append(chat(1, "x"));
        log.flush();
    }
}
