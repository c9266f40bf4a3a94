//! Line protocol: one JSON object per newline-terminated line, tagged by `t`
//! and stamped with the tick index `k`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use crate::event::{CascadeEvent, Site};
use crate::sonify::GrainEntry;

pub const PROTOCOL_VERSION: &str = "socsim/1";

pub const MESSAGE_TYPES: &[&str] = &[
    "hello",
    "config",
    "tick",
    "event",
    "grains",
    "stats",
    "control.set_drive",
    "control.drop",
    "control.pause",
    "control.reset",
    "control.stop",
    "error",
    "bye",
];

/// Running statistics over the non-empty events since the last reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveStats {
    pub events: u64,
    pub mean_size: f64,
    pub max_size: u64,
    pub decades: f64,
    pub s_min: u64,
    pub n_tail: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByeReason {
    /// A `control.stop` arrived, or the control source closed.
    Stop,
    MaxTicks,
    Fatal,
}

/// Every protocol message. Controls may omit `k`; the session restamps them
/// with the tick at which they are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum Message {
    #[serde(rename = "hello")]
    Hello { k: u64, protocol: String },
    #[serde(rename = "config")]
    Config { k: u64, config: SessionConfig },
    /// Summary of one tick: total size and number of non-empty events.
    #[serde(rename = "tick")]
    Tick {
        k: u64,
        size: u64,
        events: u64,
        paused: bool,
    },
    /// A non-empty cascade, with the drive vector in force when it ran.
    #[serde(rename = "event")]
    Event { k: u64, event: CascadeEvent, drive: [f64; 2] },
    /// Grains for one event. Onsets are seconds from the start of tick `k`.
    #[serde(rename = "grains")]
    Grains {
        k: u64,
        event_id: u64,
        entries: Vec<GrainEntry>,
    },
    #[serde(rename = "stats")]
    Stats { k: u64, stats: LiveStats },
    #[serde(rename = "control.set_drive")]
    SetDrive {
        #[serde(default)]
        k: u64,
        v: [f64; 2],
    },
    /// Manual drive: one grain, or a kick of one block. No site means the
    /// model picks (random site, or the most loaded block).
    #[serde(rename = "control.drop")]
    Drop {
        #[serde(default)]
        k: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        site: Option<Site>,
    },
    #[serde(rename = "control.pause")]
    Pause {
        #[serde(default)]
        k: u64,
        paused: bool,
    },
    #[serde(rename = "control.reset")]
    Reset {
        #[serde(default)]
        k: u64,
    },
    #[serde(rename = "control.stop")]
    Stop {
        #[serde(default)]
        k: u64,
    },
    #[serde(rename = "error")]
    Error { k: u64, message: String, fatal: bool },
    #[serde(rename = "bye")]
    Bye { k: u64, reason: ByeReason },
}

impl Message {
    pub fn tick_index(&self) -> u64 {
        match *self {
            Message::Hello { k, .. }
            | Message::Config { k, .. }
            | Message::Tick { k, .. }
            | Message::Event { k, .. }
            | Message::Grains { k, .. }
            | Message::Stats { k, .. }
            | Message::SetDrive { k, .. }
            | Message::Drop { k, .. }
            | Message::Pause { k, .. }
            | Message::Reset { k }
            | Message::Stop { k }
            | Message::Error { k, .. }
            | Message::Bye { k, .. } => k,
        }
    }

    pub fn with_tick_index(mut self, tick: u64) -> Self {
        match &mut self {
            Message::Hello { k, .. }
            | Message::Config { k, .. }
            | Message::Tick { k, .. }
            | Message::Event { k, .. }
            | Message::Grains { k, .. }
            | Message::Stats { k, .. }
            | Message::SetDrive { k, .. }
            | Message::Drop { k, .. }
            | Message::Pause { k, .. }
            | Message::Reset { k }
            | Message::Stop { k }
            | Message::Error { k, .. }
            | Message::Bye { k, .. } => *k = tick,
        }
        self
    }

    pub fn is_control(&self) -> bool {
        self.type_name().starts_with("control.")
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Config { .. } => "config",
            Message::Tick { .. } => "tick",
            Message::Event { .. } => "event",
            Message::Grains { .. } => "grains",
            Message::Stats { .. } => "stats",
            Message::SetDrive { .. } => "control.set_drive",
            Message::Drop { .. } => "control.drop",
            Message::Pause { .. } => "control.pause",
            Message::Reset { .. } => "control.reset",
            Message::Stop { .. } => "control.stop",
            Message::Error { .. } => "error",
            Message::Bye { .. } => "bye",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("protocol error at bytes {}..{}: {message}", range.start, range.end)]
pub struct ProtocolError {
    pub range: Range<usize>,
    pub message: String,
}

impl ProtocolError {
    fn new(range: Range<usize>, message: impl Into<String>) -> Self {
        Self {
            range,
            message: message.into(),
        }
    }
}

/// Serializes `msg` as one line, including the trailing newline.
pub fn encode_message(msg: &Message) -> String {
    let mut line = serde_json::to_string(msg).expect("messages always serialize");
    line.push('\n');
    line
}

/// Parses one line. A single trailing `\n` or `\r\n` is accepted.
pub fn decode_message(line: &str) -> Result<Message, ProtocolError> {
    let body = line.strip_suffix('\n').unwrap_or(line);
    let body = body.strip_suffix('\r').unwrap_or(body);
    let whole = 0..body.len();
    if let Some(at) = body.find(['\n', '\r']) {
        return Err(ProtocolError::new(at..at + 1, "line break inside a message"));
    }
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| {
        let at = e.column().saturating_sub(1).min(body.len().saturating_sub(1));
        ProtocolError::new(at..(at + 1).min(body.len()), format!("malformed JSON: {e}"))
    })?;
    let Some(object) = value.as_object() else {
        return Err(ProtocolError::new(whole, "message is not a JSON object"));
    };
    let t = match object.get("t") {
        Some(serde_json::Value::String(t)) => t.clone(),
        Some(_) => return Err(ProtocolError::new(whole, "field `t` is not a string")),
        None => return Err(ProtocolError::new(whole, "missing field `t`")),
    };
    if !MESSAGE_TYPES.contains(&t.as_str()) {
        let range = type_value_range(body).unwrap_or(whole);
        return Err(ProtocolError::new(range, format!("unknown message type `{t}`")));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::new(whole, format!("invalid `{t}` message: {e}")))
}

/// Byte range of the string value of the top-level `"t"` key, quotes included.
fn type_value_range(body: &str) -> Option<Range<usize>> {
    let bytes = body.as_bytes();
    let mut search = 0;
    while let Some(found) = body[search..].find("\"t\"") {
        let mut at = search + found + 3;
        search = at;
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if bytes.get(at) != Some(&b':') {
            continue;
        }
        at += 1;
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if bytes.get(at) != Some(&b'"') {
            continue;
        }
        let start = at;
        at += 1;
        while at < bytes.len() {
            match bytes[at] {
                b'\\' => at += 2,
                b'"' => return Some(start..at + 1),
                _ => at += 1,
            }
        }
        return None;
    }
    None
}
