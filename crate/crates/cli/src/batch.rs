use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use socsim_core::kv::KvConfig;
use socsim_core::session::{
    decode_message, encode_message, replay as replay_log, ByeReason, JsonlSink, LogRecord, Message, MessageSink,
    SessionConfig, SessionLog, PROTOCOL_VERSION,
};
use socsim_core::sonify::{
    events_to_schedule, ingest_corpus, read_wav, render, synthetic_crackle, write_wav, MappingConfig,
};
use socsim_core::sonify::corpus::{DEFAULT_GRAIN_MS, DEFAULT_HOP_MS};
use socsim_core::session::config::{SYNTHETIC_CORPUS_RATE, SYNTHETIC_CORPUS_SECONDS};
use socsim_core::stats::{criticality_report, EnsembleSource, EventEnsemble};
use socsim_core::{CascadeEvent, Model, ModelConfig, ModelError, MODEL_KEYS};

use crate::error::CliError;
use crate::{DriveMode, ReplayArgs, SimulateArgs, SonifyArgs, StatsArgs};

pub fn load_kv(path: Option<&Path>) -> Result<KvConfig, CliError> {
    match path {
        None => Ok(KvConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            KvConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

const SIMULATE_KEYS: &[&str] = &["seed", "events", "warmup", "drive"];

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut kv = load_kv(a.config.as_deref())?;
    let overrides: [(&str, Option<String>); 9] = [
        ("model", a.model.clone()),
        ("size", a.size.map(|v| v.to_string())),
        ("alpha", a.alpha.map(|v| v.to_string())),
        ("threshold", a.threshold.map(|v| v.to_string())),
        ("plate_rate", a.plate_rate.map(|v| v.to_string())),
        ("events", a.events.map(|v| v.to_string())),
        ("warmup", a.warmup.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("drive", a.drive.map(|d| if d == DriveMode::Rate { "rate" } else { "extremal" }.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            kv.set(key, v);
        }
    }
    let known: Vec<&str> = MODEL_KEYS.iter().chain(SIMULATE_KEYS).copied().collect();
    kv.reject_unknown(&known, &[])?;
    let model_cfg = ModelConfig::from_kv(&kv)?;
    let seed = kv.get_or("seed", 0u64)?;
    let events = kv.get_or("events", 1000u64)?;
    let warmup = kv.get_or("warmup", 0u64)?;
    let drive = match kv.raw("drive").unwrap_or("extremal") {
        "extremal" => DriveMode::Extremal,
        "rate" => DriveMode::Rate,
        other => return Err(CliError::Config(format!("unknown drive `{other}`; expected extremal or rate"))),
    };
    let rate = match (&model_cfg, drive) {
        (ModelConfig::Springblock { plate_rate, .. }, DriveMode::Rate) if *plate_rate > 0.0 => Some(*plate_rate),
        (ModelConfig::Springblock { .. }, DriveMode::Rate) => {
            return Err(CliError::Config("rate drive needs a positive plate_rate".into()))
        }
        (_, DriveMode::Rate) => return Err(CliError::Config("rate drive applies to the springblock model only".into())),
        _ => None,
    };

    let mut model = Model::build(&model_cfg, seed)?;
    let step = |model: &mut Model| -> Result<CascadeEvent, ModelError> {
        match (model, rate) {
            (Model::Springblock(m), Some(df)) => m.load_step(df),
            (m, _) => m.drop_at(None),
        }
    };
    for _ in 0..warmup {
        step(&mut model)?;
    }
    let mut out = create(&a.out)?;
    let config = SessionConfig {
        seed,
        ..SessionConfig::new(model_cfg)
    };
    let header = [
        Message::Hello {
            k: 0,
            protocol: PROTOCOL_VERSION.to_string(),
        },
        Message::Config { k: 0, config },
    ];
    let mut lines = String::new();
    for m in &header {
        lines.push_str(&encode_message(m));
    }
    out.write_all(lines.as_bytes()).map_err(CliError::io(&a.out))?;
    for k in 0..events {
        let event = step(&mut model)?;
        let line = encode_message(&Message::Event {
            k,
            event,
            drive: [0.0; 2],
        });
        out.write_all(line.as_bytes()).map_err(CliError::io(&a.out))?;
    }
    out.flush().map_err(CliError::io(&a.out))?;
    let snapshot = a.snapshot.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".snapshot");
        PathBuf::from(p)
    });
    std::fs::write(&snapshot, model.snapshot()).map_err(CliError::io(&snapshot))?;
    Ok(())
}

/// Events file contents: the `config` message if present, and every event.
pub struct EventFile {
    pub config: Option<SessionConfig>,
    pub events: Vec<CascadeEvent>,
}

pub fn read_events(path: &Path) -> Result<EventFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut file = EventFile {
        config: None,
        events: Vec::new(),
    };
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match decode_message(line) {
            Ok(Message::Event { event, .. }) => file.events.push(event),
            Ok(Message::Config { config, .. }) => file.config = file.config.or(Some(config)),
            Ok(_) => {}
            Err(e) => return Err(CliError::Data(format!("{}:{}: {e}", path.display(), n + 1))),
        }
    }
    Ok(file)
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let file = read_events(&a.input)?;
    let source = match &file.config {
        Some(c) => EnsembleSource {
            model: c.model.kind().to_string(),
            config: c.model.to_json(),
            seed: c.seed,
        },
        None => EnsembleSource {
            model: "unknown".into(),
            config: a.input.display().to_string(),
            seed: 0,
        },
    };
    let ensemble = EventEnsemble::from_events(&file.events, source);
    let report = criticality_report(&ensemble, a.s_min, a.bins_per_decade).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&a.report, report.to_json() + "\n").map_err(CliError::io(&a.report))?;
    if let Some(csv) = &a.csv {
        std::fs::write(csv, report.histogram_csv()).map_err(CliError::io(csv))?;
    }
    println!(
        "{} events over {:.2} decades; tau = {:.4} +/- {:.4} (s_min = {}, {} in tail)",
        report.n_events, report.decades, report.fit.tau_hat, report.fit.stderr, report.fit.s_min, report.fit.n_tail
    );
    Ok(())
}

pub fn sonify(a: &SonifyArgs) -> Result<(), CliError> {
    let mapping = match &a.config {
        Some(p) => MappingConfig::from_kv(&load_kv(Some(p))?).map_err(|e| CliError::Config(e.to_string()))?,
        None => MappingConfig::default(),
    };
    let grain_ms = a.grain_ms.unwrap_or(DEFAULT_GRAIN_MS);
    let hop_ms = a.hop_ms.unwrap_or(DEFAULT_HOP_MS);
    let file = read_events(&a.input)?;
    let (signal, sr) = match &a.corpus {
        Some(p) => read_wav(p).map_err(|e| match e {
            socsim_core::sonify::WavError::Io(source) => CliError::Io { path: p.clone(), source },
            other => CliError::Data(format!("{}: {other}", p.display())),
        })?,
        None => (
            synthetic_crackle(SYNTHETIC_CORPUS_RATE, SYNTHETIC_CORPUS_SECONDS, mapping.seed),
            SYNTHETIC_CORPUS_RATE,
        ),
    };
    let corpus = ingest_corpus(&signal, sr, grain_ms, hop_ms).map_err(|e| CliError::Config(e.to_string()))?;
    let schedule = events_to_schedule(&file.events, &corpus, &mapping).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(p) = &a.schedule {
        std::fs::write(p, schedule.to_jsonl()).map_err(CliError::io(p))?;
    }
    let audio = render(&schedule, &corpus, sr);
    write_wav(&audio, sr, &a.out).map_err(|e| match e {
        socsim_core::sonify::WavError::Io(source) => CliError::Io {
            path: a.out.clone(),
            source,
        },
        other => CliError::Data(other.to_string()),
    })?;
    Ok(())
}

/// Forwards to an inner sink and remembers how the session ended.
struct Watch<S> {
    inner: S,
    end: Option<ByeReason>,
    fatal: Option<String>,
}

impl<S: MessageSink> MessageSink for Watch<S> {
    fn send(&mut self, message: &Message) -> std::io::Result<()> {
        match message {
            Message::Bye { reason, .. } => self.end = Some(*reason),
            Message::Error {
                message, fatal: true, ..
            } => self.fatal = Some(message.clone()),
            _ => {}
        }
        self.inner.send(message)
    }

    fn record(&mut self, control: &LogRecord) -> std::io::Result<()> {
        self.inner.record(control)
    }
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let log = SessionLog::read(&a.log).map_err(|e| match e {
        socsim_core::session::SessionError::Io(source) => CliError::Io {
            path: a.log.clone(),
            source,
        },
        other => CliError::from(other),
    })?;
    let out = create(&a.out)?;
    let inner = if a.all { JsonlSink::new(out) } else { JsonlSink::events_only(out) };
    let mut sink = Watch {
        inner,
        end: None,
        fatal: None,
    };
    replay_log(&log, &mut sink).map_err(|e| match e {
        socsim_core::session::SessionError::Io(source) => CliError::Io {
            path: a.out.clone(),
            source,
        },
        other => CliError::from(other),
    })?;
    sink.inner.into_inner().flush().map_err(CliError::io(&a.out))?;
    match (sink.end, sink.fatal) {
        (Some(ByeReason::Fatal), Some(m)) => Err(CliError::Diverged(format!("replayed session failed: {m}"))),
        _ => Ok(()),
    }
}
