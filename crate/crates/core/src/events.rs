//! JSON-lines input events for the sender:
//!
//! ```text
//! {"t_us":0,"ev":"speaker","key":"alice"}
//! {"t_us":400000,"ev":"tokens","values":[12,4099,...]}
//! {"t_us":500000,"ev":"tick"}
//! ```

use crate::bits::CODEBOOK_SIZE;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase", deny_unknown_fields)]
pub enum EventRecord {
    Speaker { t_us: u64, key: String },
    Tokens { t_us: u64, values: Vec<u16> },
    Tick { t_us: u64 },
}

impl EventRecord {
    pub fn t_us(&self) -> u64 {
        match self {
            EventRecord::Speaker { t_us, .. } | EventRecord::Tokens { t_us, .. } | EventRecord::Tick { t_us } => *t_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: token {index} has value {value}, outside 13 bits")]
    TokenRange { line: usize, index: usize, value: u16 },
    #[error("line {line}: timestamp {t_us} precedes the previous event")]
    TimeReversed { line: usize, t_us: u64 },
}

pub fn parse_events(text: &str) -> Result<Vec<EventRecord>, EventError> {
    let mut out = Vec::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let ev: EventRecord =
            serde_json::from_str(raw).map_err(|e| EventError::Syntax { line, message: e.to_string() })?;
        if let EventRecord::Tokens { values, .. } = &ev {
            if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v >= CODEBOOK_SIZE) {
                return Err(EventError::TokenRange { line, index, value });
            }
        }
        if ev.t_us() < last {
            return Err(EventError::TimeReversed { line, t_us: ev.t_us() });
        }
        last = ev.t_us();
        out.push(ev);
    }
    Ok(out)
}

pub fn events_to_jsonl(events: &[EventRecord]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&serde_json::to_string(e).expect("event serializes"));
        s.push('\n');
    }
    s
}
