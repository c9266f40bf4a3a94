use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use super::config::{SessionConfig, SYNTHETIC_CORPUS_RATE, SYNTHETIC_CORPUS_SECONDS};
use super::log::{LogRecord, SessionLog};
use super::protocol::{encode_message, ByeReason, LiveStats, Message, PROTOCOL_VERSION};
use super::SessionError;
use crate::error::ModelError;
use crate::event::CascadeEvent;
use crate::model::Model;
use crate::sonify::{ingest_corpus, read_wav, synthetic_crackle, GrainCorpus, Scheduler};
use crate::stats::{decades_spanned, fit_power_law};

/// Where controls come from. `poll(k)` returns everything received since
/// the previous poll, in arrival order, or `None` once the source has closed.
pub trait ControlSource {
    fn poll(&mut self, tick: u64) -> Option<Vec<Message>>;
}

pub trait MessageSink {
    fn send(&mut self, message: &Message) -> std::io::Result<()>;

    /// Called with each control as it enters the session log.
    fn record(&mut self, _control: &LogRecord) -> std::io::Result<()> {
        Ok(())
    }
}

impl MessageSink for Vec<Message> {
    fn send(&mut self, message: &Message) -> std::io::Result<()> {
        self.push(message.clone());
        Ok(())
    }
}

/// Writes messages as protocol lines: every message, or for an events
/// file only `hello`, `config` and `event`.
pub struct JsonlSink<W: Write> {
    writer: W,
    events_only: bool,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self {
            writer,
            events_only: false,
        }
    }

    pub fn events_only(writer: W) -> Self {
        Self {
            writer,
            events_only: true,
        }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> MessageSink for JsonlSink<W> {
    fn send(&mut self, message: &Message) -> std::io::Result<()> {
        let keep = !self.events_only || matches!(message, Message::Hello { .. } | Message::Config { .. } | Message::Event { .. });
        if keep {
            self.writer.write_all(encode_message(message).as_bytes())?;
        }
        Ok(())
    }
}

/// Controls fixed in advance, each delivered at the tick it is stamped with.
/// Never closes: sessions fed from it end on a stop, `max_ticks`, or a fatal error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedControls {
    pending: VecDeque<Message>,
}

impl ScriptedControls {
    /// `controls` must be ordered by tick index.
    pub fn new(controls: impl IntoIterator<Item = Message>) -> Self {
        Self {
            pending: controls.into_iter().collect(),
        }
    }
}

impl ControlSource for ScriptedControls {
    fn poll(&mut self, tick: u64) -> Option<Vec<Message>> {
        let mut out = Vec::new();
        while self.pending.front().is_some_and(|m| m.tick_index() <= tick) {
            out.extend(self.pending.pop_front());
        }
        Some(out)
    }
}

/// Everything one tick produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    /// Controls entering the log, stamped with this tick.
    pub recorded: Vec<LogRecord>,
    pub messages: Vec<Message>,
}

/// A running session. One owner drives it tick by tick through [`Session::step`].
pub struct Session {
    config: SessionConfig,
    corpus: Option<Arc<GrainCorpus>>,
    model: Model,
    scheduler: Option<Scheduler>,
    tick: u64,
    ticks_since_reset: u64,
    rate: f64,
    drive: [f64; 2],
    credit: f64,
    paused: bool,
    sizes: Vec<u64>,
    finished: Option<ByeReason>,
}

impl Session {
    /// Validates `config` and loads or synthesizes the grain corpus if sonification is on.
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let corpus = match &config.sonify {
            None => None,
            Some(s) => {
                let (signal, sr) = match &s.corpus {
                    Some(path) => read_wav(path).map_err(|e| SessionError::Corpus(format!("{path}: {e}")))?,
                    None => (
                        synthetic_crackle(SYNTHETIC_CORPUS_RATE, SYNTHETIC_CORPUS_SECONDS, config.seed),
                        SYNTHETIC_CORPUS_RATE,
                    ),
                };
                let corpus = ingest_corpus(&signal, sr, s.grain_ms, s.hop_ms).map_err(|e| SessionError::Corpus(e.to_string()))?;
                Some(Arc::new(corpus))
            }
        };
        Self::with_corpus(config, corpus)
    }

    /// Like [`Session::new`] with an already ingested corpus.
    pub fn with_corpus(config: SessionConfig, corpus: Option<Arc<GrainCorpus>>) -> Result<Self, SessionError> {
        config.validate()?;
        if config.sonify.is_some() && corpus.is_none() {
            return Err(SessionError::Corpus("sonification is on but no corpus was given".into()));
        }
        let mut session = Self {
            model: build_model(&config)?,
            scheduler: None,
            tick: 0,
            ticks_since_reset: 0,
            rate: 0.0,
            drive: [0.0; 2],
            credit: 0.0,
            paused: false,
            sizes: Vec::new(),
            finished: None,
            corpus,
            config,
        };
        session.reset()?;
        Ok(session)
    }

    fn reset(&mut self) -> Result<(), SessionError> {
        self.model = build_model(&self.config)?;
        self.scheduler = match (&self.corpus, &self.config.sonify) {
            (Some(corpus), Some(s)) => {
                Some(Scheduler::new(corpus, &s.mapping).map_err(|e| SessionError::Corpus(e.to_string()))?)
            }
            _ => None,
        };
        self.ticks_since_reset = 0;
        self.rate = self.config.model.initial_rate();
        self.drive = [0.0; 2];
        self.credit = 0.0;
        self.paused = false;
        self.sizes.clear();
        Ok(())
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn corpus(&self) -> Option<&Arc<GrainCorpus>> {
        self.corpus.as_ref()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Index of the next tick to run.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn finished(&self) -> Option<ByeReason> {
        self.finished
    }

    pub fn snapshot(&self) -> String {
        self.model.snapshot()
    }

    /// The `hello` and `config` messages that open every stream.
    pub fn opening(&self) -> [Message; 2] {
        [
            Message::Hello {
                k: 0,
                protocol: PROTOCOL_VERSION.to_string(),
            },
            Message::Config {
                k: 0,
                config: self.config.clone(),
            },
        ]
    }

    /// Runs one tick: applies `controls` in order, advances the model one
    /// drive step unless paused, and reports. `None` means the control
    /// source has closed, which is logged and handled as a stop.
    pub fn step(&mut self, controls: Option<Vec<Message>>) -> TickOutput {
        let k = self.tick;
        let mut out = TickOutput::default();
        if self.finished.is_some() {
            return out;
        }
        let controls = controls.unwrap_or_else(|| vec![Message::Stop { k }]);
        let mut events = Vec::new();
        let mut stopped = false;
        for control in controls {
            if !control.is_control() {
                out.messages.push(Message::Error {
                    k,
                    message: format!("`{}` is not a control message", control.type_name()),
                    fatal: false,
                });
                continue;
            }
            let control = control.with_tick_index(k);
            out.recorded.push(LogRecord {
                tick_index: k,
                control: control.clone(),
            });
            if stopped {
                continue;
            }
            match self.apply(&control, &mut events) {
                Ok(stop) => stopped = stop,
                Err(ModelError::Diverged(d)) => return self.fatal(out, d.to_string()),
                Err(e) => out.messages.push(Message::Error {
                    k,
                    message: e.to_string(),
                    fatal: false,
                }),
            }
        }
        if stopped {
            out.messages.push(Message::Bye { k, reason: ByeReason::Stop });
            self.finished = Some(ByeReason::Stop);
            return out;
        }
        if !self.paused {
            if let Err(e) = self.drive_step(&mut events) {
                return self.fatal(out, e.to_string());
            }
        }
        self.report(k, events, &mut out.messages);
        self.tick += 1;
        self.ticks_since_reset += 1;
        if self.config.max_ticks.is_some_and(|m| self.tick >= m) {
            out.messages.push(Message::Bye {
                k,
                reason: ByeReason::MaxTicks,
            });
            self.finished = Some(ByeReason::MaxTicks);
        }
        out
    }

    /// A fatal error ends the session. A stop is logged one tick later so
    /// the log is terminated; replay fails again at tick `k` before reaching it.
    fn fatal(&mut self, mut out: TickOutput, message: String) -> TickOutput {
        let k = self.tick;
        out.messages.push(Message::Error { k, message, fatal: true });
        out.messages.push(Message::Bye { k, reason: ByeReason::Fatal });
        out.recorded.push(LogRecord {
            tick_index: k + 1,
            control: Message::Stop { k: k + 1 },
        });
        self.finished = Some(ByeReason::Fatal);
        out
    }

    /// Returns `true` on stop.
    fn apply(&mut self, control: &Message, events: &mut Vec<CascadeEvent>) -> Result<bool, ModelError> {
        match control {
            Message::SetDrive { v, .. } => {
                self.rate = match &mut self.model {
                    Model::Springblock(m) => m.set_plate_rate(*v)?,
                    _ => {
                        if !v.iter().all(|c| c.is_finite()) {
                            return Err(ModelError::Domain(format!("drive vector {v:?} is not finite")));
                        }
                        self.config.model.rate_scale() * (v[0] * v[0] + v[1] * v[1]).sqrt()
                    }
                };
                self.drive = *v;
            }
            Message::Drop { site, .. } => events.push(self.model.drop_at(*site)?),
            Message::Pause { paused, .. } => self.paused = *paused,
            Message::Reset { .. } => {
                self.reset().map_err(|e| ModelError::Config(e.to_string()))?;
                events.clear();
            }
            Message::Stop { .. } => return Ok(true),
            _ => unreachable!("non-controls are filtered before apply"),
        }
        Ok(false)
    }

    fn drive_step(&mut self, events: &mut Vec<CascadeEvent>) -> Result<(), ModelError> {
        match &mut self.model {
            Model::Springblock(m) => {
                if self.rate > 0.0 {
                    events.push(m.load_step(self.rate)?);
                }
            }
            model => {
                self.credit += self.rate;
                let grains = self.credit.floor();
                self.credit -= grains;
                for _ in 0..grains as u64 {
                    events.push(model.drop_at(None)?);
                }
            }
        }
        Ok(())
    }

    fn report(&mut self, k: u64, events: Vec<CascadeEvent>, messages: &mut Vec<Message>) {
        let events: Vec<CascadeEvent> = events.into_iter().filter(|e| !e.is_empty()).collect();
        messages.push(Message::Tick {
            k,
            size: events.iter().map(|e| e.size).sum(),
            events: events.len() as u64,
            paused: self.paused,
        });
        for event in events {
            self.sizes.push(event.size);
            let grains = match (&mut self.scheduler, &self.corpus) {
                (Some(scheduler), Some(corpus)) => {
                    let mut entries = Vec::new();
                    scheduler.schedule_event(corpus, &event, 0.0, &mut entries);
                    entries.sort_by(|a, b| a.onset.total_cmp(&b.onset));
                    (!entries.is_empty()).then_some(entries)
                }
                _ => None,
            };
            let event_id = event.event_id;
            messages.push(Message::Event {
                k,
                event,
                drive: self.drive,
            });
            if let Some(entries) = grains {
                messages.push(Message::Grains { k, event_id, entries });
            }
        }
        if (self.ticks_since_reset + 1).is_multiple_of(self.config.stats_interval) {
            messages.push(Message::Stats {
                k,
                stats: live_stats(&self.sizes, self.config.s_min),
            });
        }
    }
}

fn build_model(config: &SessionConfig) -> Result<Model, SessionError> {
    Model::build(&config.model, config.seed).map_err(|e| SessionError::Config(e.to_string()))
}

fn live_stats(sizes: &[u64], s_min: u64) -> LiveStats {
    let n = sizes.len() as u64;
    let total: u128 = sizes.iter().map(|&s| u128::from(s)).sum();
    let fit = fit_power_law(sizes, s_min).ok();
    LiveStats {
        events: n,
        mean_size: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        max_size: sizes.iter().copied().max().unwrap_or(0),
        decades: decades_spanned(sizes),
        s_min,
        n_tail: sizes.iter().filter(|&&s| s >= s_min).count() as u64,
        tau_hat: fit.as_ref().map(|f| f.tau_hat),
        stderr: fit.as_ref().map(|f| f.stderr),
    }
}

/// Runs a session to completion and returns its control log.
pub fn run_session(
    config: &SessionConfig,
    source: &mut dyn ControlSource,
    sink: &mut dyn MessageSink,
) -> Result<SessionLog, SessionError> {
    drive_session(Session::new(config.clone())?, source, sink)
}

fn drive_session(
    mut session: Session,
    source: &mut dyn ControlSource,
    sink: &mut dyn MessageSink,
) -> Result<SessionLog, SessionError> {
    let mut log = SessionLog::new(session.config().clone());
    for m in session.opening() {
        sink.send(&m)?;
    }
    while session.finished().is_none() {
        let controls = source.poll(session.tick_index());
        let out = session.step(controls);
        for r in out.recorded {
            sink.record(&r)?;
            log.records.push(r);
        }
        for m in &out.messages {
            sink.send(m)?;
        }
    }
    Ok(log)
}

/// Re-runs a logged session, sending the same message stream to `sink`.
pub fn replay(log: &SessionLog, sink: &mut dyn MessageSink) -> Result<SessionLog, SessionError> {
    if !log.is_terminated() {
        return Err(SessionError::Log {
            line: log.records.len() + 1,
            message: "log has no stop record and no max_ticks; replay would not end".into(),
        });
    }
    let mut source = ScriptedControls::new(log.records.iter().map(|r| r.control.clone().with_tick_index(r.tick_index)));
    drive_session(Session::new(log.header.clone())?, &mut source, sink)
}
