//! Append-only run traces.
//!
//! Every agent call, membership grading, vote, and fusion decision of a run
//! is recorded as one event. Timestamps are logical sequence numbers, not
//! wall-clock times, so scripted runs serialize byte-identically. Traces
//! persist as line-delimited JSON, one event per line, flushed and synced at
//! node completion.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot open trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Plan,
    RuleGenerated,
    DeaCall,
    Claims,
    Votes,
    Trust,
    Resolution,
    NodeResult,
    NodeRetry,
    NodeError,
    Final,
    RunError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Logical timestamp: position in the run's event order.
    pub timestamp: u64,
    pub node_id: NodeId,
    pub kind: EventKind,
    pub payload: Value,
}

/// The full event log of one run, in append order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: String,
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn new(run_id: impl Into<String>) -> Self {
        RunTrace {
            run_id: run_id.into(),
            events: Vec::new(),
        }
    }

    /// Appends an event, assigning the next logical timestamp.
    pub fn append(&mut self, node_id: impl Into<String>, kind: EventKind, payload: Value) {
        let timestamp = self.events.len() as u64;
        self.events.push(TraceEvent {
            timestamp,
            node_id: node_id.into(),
            kind,
            payload,
        });
    }

    pub fn events_of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn node_result(&self, node_id: &str) -> Option<&TraceEvent> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::NodeResult && e.node_id == node_id)
    }

    /// Serializes the trace as line-delimited JSON, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    /// Loads a trace from a `.jsonl` file; the run id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let run_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = File::open(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TraceError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent =
                serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            events.push(event);
        }
        Ok(RunTrace { run_id, events })
    }
}

/// Serialized appender persisting events as they are committed. Concurrent
/// node workers buffer their events and commit through this writer one node
/// at a time.
pub struct TraceWriter {
    file: Mutex<File>,
    path: String,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| TraceError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        let file = File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(TraceWriter {
            file: Mutex::new(file),
            path: path.display().to_string(),
        })
    }

    /// Appends events and syncs them to disk.
    pub fn commit(&self, events: &[TraceEvent]) -> Result<(), TraceError> {
        let mut file = self.file.lock().unwrap();
        for event in events {
            let line = serde_json::to_string(event).expect("trace events serialize");
            file.write_all(line.as_bytes())
                .and_then(|_| file.write_all(b"\n"))
                .map_err(|source| TraceError::Io {
                    path: self.path.clone(),
                    source,
                })?;
        }
        file.flush().and_then(|_| file.sync_data()).map_err(|source| TraceError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Event buffer for one node's pipeline stages. Buffered events carry a
/// placeholder timestamp; real timestamps are assigned when the owning run
/// commits the buffer, keeping concurrent traces canonical.
#[derive(Debug, Default, Clone)]
pub struct NodeEventBuffer {
    pub node_id: NodeId,
    events: Vec<(EventKind, Value)>,
}

impl NodeEventBuffer {
    pub fn new(node_id: impl Into<String>) -> Self {
        NodeEventBuffer {
            node_id: node_id.into(),
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, kind: EventKind, payload: Value) {
        self.events.push((kind, payload));
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends another buffer's events after this one's.
    pub fn merge(&mut self, other: NodeEventBuffer) {
        self.events.extend(other.events);
    }

    pub fn drain_into(self, trace: &mut RunTrace) {
        for (kind, payload) in self.events {
            trace.append(self.node_id.clone(), kind, payload);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn append_assigns_sequential_timestamps() {
        let mut trace = RunTrace::new("r1");
        trace.append("T", EventKind::Plan, json!({"a": 1}));
        trace.append("T1", EventKind::NodeResult, json!({"b": 2}));
        assert_eq!(trace.events[0].timestamp, 0);
        assert_eq!(trace.events[1].timestamp, 1);
    }

    #[test]
    fn jsonl_round_trips_through_files() {
        let mut trace = RunTrace::new("run-a");
        trace.append("T", EventKind::Plan, json!({"graph": "g"}));
        trace.append("T1", EventKind::NodeResult, json!({"text": "out"}));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run-a.jsonl");
        std::fs::write(&path, trace.to_jsonl()).unwrap();
        let loaded = RunTrace::load(&path).unwrap();
        assert_eq!(loaded, trace);
    }

    #[test]
    fn writer_commits_are_readable_incrementally() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let writer = TraceWriter::create(&path).unwrap();
        let mut trace = RunTrace::new("w");
        trace.append("T", EventKind::Plan, json!({}));
        writer.commit(&trace.events).unwrap();
        let loaded = RunTrace::load(&path).unwrap();
        assert_eq!(loaded.events.len(), 1);
    }

    #[test]
    fn buffer_commits_preserve_order() {
        let mut buffer = NodeEventBuffer::new("T1");
        buffer.push(EventKind::RuleGenerated, json!({"rules": 2}));
        buffer.push(EventKind::NodeResult, json!({"text": "x"}));
        let mut trace = RunTrace::new("r");
        buffer.drain_into(&mut trace);
        assert_eq!(trace.events[0].kind, EventKind::RuleGenerated);
        assert_eq!(trace.events[1].kind, EventKind::NodeResult);
        assert_eq!(trace.events[1].timestamp, 1);
    }
}
