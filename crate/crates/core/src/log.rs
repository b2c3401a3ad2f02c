//! Append-only run event log with a rolling checksum chain.
//!
//! One JSON object per line. Each line carries its sequence number, the
//! event payload, and a 64-bit FNV-1a checksum folded over the previous
//! line's checksum and the canonical payload bytes, so any truncation at a
//! line boundary leaves a verifiable prefix and any interior tampering is
//! detected. A lock file keeps a run directory single-writer.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bo::RunConfig;
use crate::gp::KernelParams;
use crate::oracle::EvaluationRecord;
use crate::space::ContinuousPoint;

/// File name of the event log inside a run directory.
pub const LOG_FILE: &str = "run.log";
/// File name of the writer lock inside a run directory.
pub const LOCK_FILE: &str = ".lock";

/// Everything the loop persists, one event per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RunHeader {
        version: String,
        os: String,
        arch: String,
        config: RunConfig,
        space_name: String,
        /// Full space config document, so replay does not depend on files
        /// that may have drifted since the run.
        space_doc: String,
        cardinality: String,
        timestamp: f64,
    },
    InitEval {
        index: usize,
        x: ContinuousPoint,
        record: EvaluationRecord,
    },
    BoEval {
        iteration: usize,
        x: ContinuousPoint,
        record: EvaluationRecord,
    },
    Refit {
        evals: usize,
        gp1: KernelParams<f64>,
        gp1_lml: f64,
        gp2: KernelParams<f64>,
        gp2_lml: f64,
    },
    RefpointUpdate {
        ref_point: (f64, f64),
        trigger: String,
    },
    FrontSnapshot {
        evals: usize,
        ids: Vec<String>,
        hypervolume: f64,
    },
    RunEnd {
        status: String,
        total_evals: usize,
        timestamp: f64,
    },
}

/// One verified log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub chain: String,
    pub event: EventKind,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: malformed event: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: sequence {found}, expected {expected}")]
    SequenceGap {
        line: usize,
        expected: u64,
        found: u64,
    },
    #[error("line {line}: checksum chain broken (stored {stored}, computed {computed})")]
    ChecksumMismatch {
        line: usize,
        stored: String,
        computed: String,
    },
    #[error("log was written by version {log_version}, this binary is {binary_version}; \
             rerun with a matching build or start a fresh run directory")]
    VersionMismatch {
        log_version: String,
        binary_version: String,
    },
    #[error("run directory {0} is locked by live process {1}")]
    Locked(PathBuf, u32),
    #[error("log does not start with a run_header event")]
    MissingHeader,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn chain_checksum(prev: &str, seq: u64, payload: &str) -> String {
    let mut h = fnv1a(FNV_OFFSET, prev.as_bytes());
    h = fnv1a(h, &seq.to_le_bytes());
    h = fnv1a(h, payload.as_bytes());
    format!("{h:016x}")
}

/// Serializes the payload exactly as the checksum sees it.
fn canonical_payload(event: &EventKind) -> String {
    serde_json::to_string(event).expect("event serializes")
}

/// Single-writer guard: a lock file holding the owner pid. A lock held by a
/// dead process is reclaimed.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<LockGuard, LogError> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(LockGuard { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let pid: Option<u32> = std::fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse().ok());
                    match pid {
                        Some(pid) if Path::new(&format!("/proc/{pid}")).exists() => {
                            return Err(LogError::Locked(dir.to_owned(), pid));
                        }
                        _ => {
                            // Stale lock from a dead writer.
                            let _ = std::fs::remove_file(&path);
                        }
                    }
                }
                Err(source) => return Err(LogError::Io { path, source }),
            }
        }
        Err(LogError::Locked(dir.to_owned(), 0))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Appends events to a log file, maintaining the checksum chain.
pub struct EventWriter {
    file: File,
    path: PathBuf,
    next_seq: u64,
    last_chain: String,
}

impl EventWriter {
    /// Creates a fresh log (truncating anything present).
    pub fn create(path: &Path) -> Result<EventWriter, LogError> {
        let file = File::create(path).map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(EventWriter {
            file,
            path: path.to_owned(),
            next_seq: 0,
            last_chain: String::new(),
        })
    }

    /// Opens an existing log for appending after `events` were read back.
    /// The file is truncated to exactly the verified prefix first, dropping
    /// any partial line left by an interrupted writer.
    pub fn append_after(path: &Path, events: &[RunEvent]) -> Result<EventWriter, LogError> {
        let mut valid_bytes = 0u64;
        let mut next_seq = 0;
        let mut last_chain = String::new();
        if let Some(last) = events.last() {
            next_seq = last.seq + 1;
            last_chain = last.chain.clone();
        }
        // Recompute the byte length of the verified prefix.
        let file = File::open(path).map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })?;
        let reader = BufReader::new(file);
        for (count, line) in reader.split(b'\n').enumerate() {
            if count == events.len() {
                break;
            }
            let line = line.map_err(|source| LogError::Io {
                path: path.to_owned(),
                source,
            })?;
            valid_bytes += line.len() as u64 + 1;
        }
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|source| LogError::Io {
                path: path.to_owned(),
                source,
            })?;
        file.set_len(valid_bytes).map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0))
            .map_err(|source| LogError::Io {
                path: path.to_owned(),
                source,
            })?;
        Ok(EventWriter {
            file,
            path: path.to_owned(),
            next_seq,
            last_chain,
        })
    }

    /// Appends one event and flushes it; returns the sealed line.
    pub fn write(&mut self, event: EventKind) -> Result<RunEvent, LogError> {
        let payload = canonical_payload(&event);
        let chain = chain_checksum(&self.last_chain, self.next_seq, &payload);
        let line = format!(
            "{{\"seq\":{},\"chain\":\"{}\",\"event\":{}}}\n",
            self.next_seq, chain, payload
        );
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })?;
        let sealed = RunEvent {
            seq: self.next_seq,
            chain: chain.clone(),
            event,
        };
        self.next_seq += 1;
        self.last_chain = chain;
        Ok(sealed)
    }
}

/// Outcome of reading a log back.
pub struct ReadOutcome {
    pub events: Vec<RunEvent>,
    /// True when the file ended with an unparseable or unverifiable tail
    /// line (an interrupted append) that was dropped.
    pub truncated_tail: bool,
}

/// Reads and verifies a log. With `allow_partial_tail`, a single broken
/// final line is treated as an interrupted append and dropped; interior
/// breaks are always hard errors.
pub fn read_events(path: &Path, allow_partial_tail: bool) -> Result<ReadOutcome, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_owned(),
        source,
    })?;
    let reader = BufReader::new(file);
    let raw_lines: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })?;
    let mut events = Vec::with_capacity(raw_lines.len());
    let mut last_chain = String::new();
    let mut truncated_tail = false;
    for (idx, raw) in raw_lines.iter().enumerate() {
        let line_no = idx + 1;
        let is_last = idx + 1 == raw_lines.len();
        let fail = |e: LogError| -> Result<Option<LogError>, LogError> {
            if allow_partial_tail && is_last {
                Ok(Some(e))
            } else {
                Err(e)
            }
        };
        if raw.trim().is_empty() {
            if is_last {
                break;
            }
            return Err(LogError::Malformed {
                line: line_no,
                detail: "empty line".into(),
            });
        }
        let parsed: Result<RunEvent, _> = serde_json::from_str(raw);
        let event = match parsed {
            Ok(e) => e,
            Err(e) => {
                if fail(LogError::Malformed {
                    line: line_no,
                    detail: e.to_string(),
                })?
                .is_some()
                {
                    truncated_tail = true;
                    break;
                }
                unreachable!()
            }
        };
        if event.seq != events.len() as u64 {
            if fail(LogError::SequenceGap {
                line: line_no,
                expected: events.len() as u64,
                found: event.seq,
            })?
            .is_some()
            {
                truncated_tail = true;
                break;
            }
            unreachable!()
        }
        let payload = canonical_payload(&event.event);
        let computed = chain_checksum(&last_chain, event.seq, &payload);
        if computed != event.chain {
            if fail(LogError::ChecksumMismatch {
                line: line_no,
                stored: event.chain.clone(),
                computed,
            })?
            .is_some()
            {
                truncated_tail = true;
                break;
            }
            unreachable!()
        }
        last_chain = event.chain.clone();
        events.push(event);
    }
    Ok(ReadOutcome {
        events,
        truncated_tail,
    })
}

/// Extracts and version-checks the run header (must be the first event).
pub fn header_of(events: &[RunEvent]) -> Result<&EventKind, LogError> {
    match events.first().map(|e| &e.event) {
        Some(header @ EventKind::RunHeader { version, .. }) => {
            let binary = env!("CARGO_PKG_VERSION");
            if version != binary {
                return Err(LogError::VersionMismatch {
                    log_version: version.clone(),
                    binary_version: binary.to_owned(),
                });
            }
            Ok(header)
        }
        _ => Err(LogError::MissingHeader),
    }
}
