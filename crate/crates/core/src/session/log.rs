//! `.slog` files: the session config as one JSON line, then every control
//! the session applied, one protocol line each, stamped with its tick.

use std::path::Path;

use super::config::SessionConfig;
use super::protocol::{decode_message, encode_message, Message};
use super::SessionError;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub tick_index: u64,
    pub control: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionConfig,
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn new(header: SessionConfig) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    /// Appends a control applied at `tick_index`, restamping its `k`.
    pub fn push(&mut self, tick_index: u64, control: Message) {
        debug_assert!(control.is_control());
        debug_assert!(self.records.last().is_none_or(|r| r.tick_index <= tick_index));
        self.records.push(LogRecord {
            tick_index,
            control: control.with_tick_index(tick_index),
        });
    }

    pub fn header_line(header: &SessionConfig) -> String {
        header.to_json() + "\n"
    }

    pub fn to_slog(&self) -> String {
        let mut out = Self::header_line(&self.header);
        for r in &self.records {
            out.push_str(&encode_message(&r.control));
        }
        out
    }

    pub fn from_slog(text: &str) -> Result<Self, SessionError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(SessionError::Log {
            line: 1,
            message: "empty log".into(),
        })?;
        let header: SessionConfig = serde_json::from_str(first).map_err(|e| SessionError::Log {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        header.validate().map_err(|e| SessionError::Log {
            line: 1,
            message: e.to_string(),
        })?;
        let mut log = Self::new(header);
        for (n, line) in lines {
            let err = |message: String| SessionError::Log { line: n + 1, message };
            let control = decode_message(line).map_err(|e| err(e.to_string()))?;
            if !control.is_control() {
                return Err(err(format!("`{}` is not a control message", control.type_name())));
            }
            let tick = control.tick_index();
            if log.records.last().is_some_and(|r| r.tick_index > tick) {
                return Err(err(format!("tick {tick} is earlier than the previous record")));
            }
            log.records.push(LogRecord {
                tick_index: tick,
                control,
            });
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Self::from_slog(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        std::fs::write(path, self.to_slog())?;
        Ok(())
    }

    /// True if replaying this log ends by itself: it holds a stop, or the
    /// config caps the tick count.
    pub fn is_terminated(&self) -> bool {
        self.header.max_ticks.is_some() || self.records.iter().any(|r| matches!(r.control, Message::Stop { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind};

    fn log() -> SessionLog {
        let mut log = SessionLog::new(SessionConfig::new(ModelConfig::default_for(ModelKind::Springblock)));
        log.push(3, Message::SetDrive { k: 0, v: [1.0, 0.5] });
        log.push(3, Message::Pause { k: 0, paused: true });
        log.push(8, Message::Stop { k: 0 });
        log
    }

    #[test]
    fn slog_round_trip() {
        let log = log();
        let text = log.to_slog();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains(r#""k":3"#));
        assert_eq!(SessionLog::from_slog(&text).unwrap(), log);
        assert!(log.is_terminated());
    }

    #[test]
    fn rejects_bad_records() {
        let header = log().to_slog().lines().next().unwrap().to_string();
        let decreasing = format!("{header}\n{{\"t\":\"control.reset\",\"k\":5}}\n{{\"t\":\"control.reset\",\"k\":4}}\n");
        assert!(matches!(SessionLog::from_slog(&decreasing), Err(SessionError::Log { line: 3, .. })));
        let not_control = format!("{header}\n{{\"t\":\"bye\",\"k\":5,\"reason\":\"stop\"}}\n");
        assert!(matches!(SessionLog::from_slog(&not_control), Err(SessionError::Log { line: 2, .. })));
        assert!(SessionLog::from_slog("").is_err());
        assert!(SessionLog::from_slog("{}\n").is_err());
    }
}
