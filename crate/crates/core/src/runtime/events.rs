use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Turn,
    ToolCall,
    ToolResult,
    HubWrite,
    HubRead,
    Answer,
    Status,
}

/// One line of the event log. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Milliseconds since the log was opened.
    pub wall_time: u64,
    pub agent_id: String,
    pub kind: EventKind,
    pub payload: Value,
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }

    pub fn normalized(&self) -> Event {
        Event { wall_time: 0, ..self.clone() }
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }

    pub fn u64_field(&self, key: &str) -> Option<u64> {
        self.payload.get(key).and_then(Value::as_u64)
    }
}

struct Inner {
    events: Vec<Event>,
    sink: Option<File>,
    sink_error: Option<String>,
}

/// Totally ordered, append-only event stream shared by every agent of a run.
///
/// When backed by a file, each event is written and flushed as one line
/// before `emit` returns, so a crash never leaves a partial prefix.
pub struct EventLog {
    inner: Mutex<Inner>,
    start: Instant,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self { inner: Mutex::new(Inner { events: Vec::new(), sink: None, sink_error: None }), start: Instant::now() }
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).truncate(true).write(true).open(path)?;
        let log = Self::new();
        log.inner.lock().expect("event log poisoned").sink = Some(file);
        Ok(log)
    }

    pub fn emit(&self, agent_id: &str, kind: EventKind, payload: Value) -> u64 {
        let wall_time = self.start.elapsed().as_millis() as u64;
        let mut inner = self.inner.lock().expect("event log poisoned");
        let event = Event { seq: inner.events.len() as u64, wall_time, agent_id: agent_id.to_string(), kind, payload };
        if let Some(file) = inner.sink.as_mut() {
            let written = writeln!(file, "{}", event.to_line()).and_then(|_| file.flush());
            if let Err(e) = written {
                inner.sink_error.get_or_insert(e.to_string());
            }
        }
        inner.events.push(event);
        inner.events.len() as u64 - 1
    }

    pub fn events(&self) -> Vec<Event> {
        self.inner.lock().expect("event log poisoned").events.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("event log poisoned").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First error hit while writing to the backing file, if any.
    pub fn sink_error(&self) -> Option<String> {
        self.inner.lock().expect("event log poisoned").sink_error.clone()
    }
}

/// The log as JSONL with every `wall_time` set to 0.
pub fn normalized_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.normalized().to_line());
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(events)
}
