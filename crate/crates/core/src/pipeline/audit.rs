//! Append-only JSON-lines audit trail.
//!
//! Events carry ids, counts, verdicts and failure classes. Document text,
//! entity values and spans never reach the log.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct AuditLog {
    sink: Option<Mutex<File>>,
    job_id: String,
}

impl AuditLog {
    /// A log that drops every event.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>, job_id: &str) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            sink: Some(Mutex::new(file)),
            job_id: job_id.to_string(),
        })
    }

    pub fn is_enabled(&self) -> bool {
        self.sink.is_some()
    }

    pub fn set_job_id(&mut self, job_id: &str) {
        self.job_id = job_id.to_string();
    }

    /// Appends `{"ts", "job_id", "event", ..fields}`. Write errors are
    /// swallowed so auditing never changes a verification result.
    pub fn event(&self, event: &str, fields: Value) {
        let Some(sink) = &self.sink else { return };
        let mut line = Map::new();
        line.insert("ts".into(), Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true).into());
        line.insert("job_id".into(), self.job_id.clone().into());
        line.insert("event".into(), event.into());
        if let Value::Object(extra) = fields {
            line.extend(extra);
        }
        let mut text = Value::Object(line).to_string();
        text.push('\n');
        let mut f = sink.lock().unwrap_or_else(|e| e.into_inner());
        let _ = f.write_all(text.as_bytes());
    }
}
