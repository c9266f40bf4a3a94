//! Live sessions. The session runs on its own thread and owns the model;
//! network tasks talk to it only through the control queue and the
//! broadcast of outgoing lines.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use socsim_core::session::{
    decode_message, encode_message, ByeReason, LogRecord, Message, Session, SessionConfig, SessionLog,
};
use socsim_core::sonify::encode_wav;
use tokio::sync::broadcast;

use crate::batch::load_kv;
use crate::error::CliError;
use crate::ServeArgs;

/// What reaches the session thread: a decoded message, or a line that failed to decode.
type Inbound = Result<Message, String>;

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let mut kv = load_kv(Some(&a.config))?;
    if let Some(seed) = a.seed {
        kv.set("seed", seed);
    }
    if let Some(m) = a.max_ticks {
        kv.set("max_ticks", m);
    }
    let config = SessionConfig::from_kv(&kv)?;
    // Everything that can fail on bad input happens before any port is bound.
    let session = Session::new(config)?;
    let log = a.log.as_deref().map(|p| LogFile::create(p, session.config())).transpose()?;
    if a.stdio {
        serve_stdio(session, log)
    } else {
        serve_ws(session, log, &a.bind, a.port)
    }
}

struct LogFile {
    file: BufWriter<File>,
    path: std::path::PathBuf,
}

impl LogFile {
    fn create(path: &Path, config: &SessionConfig) -> Result<Self, CliError> {
        let mut file = File::create(path).map(BufWriter::new).map_err(CliError::io(path))?;
        file.write_all(SessionLog::header_line(config).as_bytes())
            .and_then(|()| file.flush())
            .map_err(CliError::io(path))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn append(&mut self, r: &LogRecord) -> Result<(), CliError> {
        self.file
            .write_all(encode_message(&r.control).as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(CliError::io(&self.path))
    }
}

/// Paces ticks against the wall clock (best effort) and drains the control queue.
struct LiveSource {
    rx: Receiver<Inbound>,
    /// Raised on Ctrl-C; becomes a stop at the next tick.
    interrupted: Arc<AtomicBool>,
    start: Instant,
    tick_seconds: f64,
    closed: bool,
}

impl LiveSource {
    fn poll(&mut self, tick: u64) -> (Option<Vec<Message>>, Vec<String>) {
        let due = self.start + Duration::from_secs_f64(tick as f64 * self.tick_seconds);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let mut controls = Vec::new();
        let mut errors = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(Ok(m)) => controls.push(m),
                Ok(Err(e)) => errors.push(e),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.closed = true;
                    break;
                }
            }
        }
        if self.interrupted.swap(false, Ordering::SeqCst) {
            controls.push(Message::Stop { k: tick });
        }
        if self.closed && controls.is_empty() {
            (None, errors)
        } else {
            (Some(controls), errors)
        }
    }
}

/// Runs the tick loop until the session ends; returns how it ended.
fn run_loop(
    mut session: Session,
    rx: Receiver<Inbound>,
    interrupted: Arc<AtomicBool>,
    mut log: Option<LogFile>,
    mut emit: impl FnMut(&Message),
    mut after_tick: impl FnMut(&Session),
) -> Result<ByeReason, CliError> {
    let mut source = LiveSource {
        rx,
        interrupted,
        start: Instant::now(),
        tick_seconds: session.config().tick_seconds,
        closed: false,
    };
    for m in session.opening() {
        emit(&m);
    }
    loop {
        if let Some(reason) = session.finished() {
            return Ok(reason);
        }
        let k = session.tick_index();
        let (controls, errors) = source.poll(k);
        for message in errors {
            emit(&Message::Error { k, message, fatal: false });
        }
        let out = session.step(controls);
        if let Some(log) = log.as_mut() {
            for r in &out.recorded {
                log.append(r)?;
            }
        }
        for m in &out.messages {
            emit(m);
        }
        after_tick(&session);
    }
}

fn decode_inbound(line: &str) -> Inbound {
    decode_message(line).map_err(|e| e.to_string())
}

/// Raises the returned flag on Ctrl-C.
fn watch_ctrl_c() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let raised = flag.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
        if let Ok(rt) = rt {
            if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
                raised.store(true, Ordering::SeqCst);
            }
        }
    });
    flag
}

fn serve_stdio(session: Session, log: Option<LogFile>) -> Result<(), CliError> {
    let (tx, rx) = mpsc::channel();
    let interrupted = watch_ctrl_c();
    std::thread::spawn(move || {
        for line in std::io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if !line.trim().is_empty() && tx.send(decode_inbound(&line)).is_err() {
                break;
            }
        }
    });
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut write_failed = None;
    let reason = run_loop(
        session,
        rx,
        interrupted,
        log,
        |m| {
            if write_failed.is_none() {
                if let Err(e) = out.write_all(encode_message(m).as_bytes()).and_then(|()| out.flush()) {
                    write_failed = Some(e);
                }
            }
        },
        |_| {},
    )?;
    if let Some(source) = write_failed {
        return Err(CliError::Io {
            path: "<stdout>".into(),
            source,
        });
    }
    finish(reason)
}

fn finish(reason: ByeReason) -> Result<(), CliError> {
    match reason {
        ByeReason::Fatal => Err(CliError::Diverged("session ended on a fatal error".into())),
        _ => Ok(()),
    }
}

/// One outgoing protocol line.
#[derive(Debug)]
struct Line {
    k: u64,
    text: String,
    bye: bool,
}

impl Line {
    fn of(m: &Message) -> Self {
        let mut text = encode_message(m);
        text.pop();
        Self {
            k: m.tick_index(),
            text,
            bye: matches!(m, Message::Bye { .. }),
        }
    }
}

#[derive(Clone)]
struct AppState {
    controls: Sender<Inbound>,
    lines: broadcast::Sender<Arc<Line>>,
    opening: Arc<Vec<Line>>,
    snapshot: Arc<RwLock<String>>,
    corpus_wav: Option<Bytes>,
    finished: Arc<RwLock<Option<Arc<Line>>>>,
}

fn serve_ws(session: Session, log: Option<LogFile>, bind: &str, port: u16) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("<runtime>"))?;
    rt.block_on(async move {
        let addr = format!("{bind}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(CliError::io(&addr))?;
        let local = listener.local_addr().map_err(CliError::io(&addr))?;
        eprintln!("listening on http://{local}/session");

        let (tx, rx) = mpsc::channel();
        let (lines, _) = broadcast::channel::<Arc<Line>>(4096);
        let state = AppState {
            controls: tx.clone(),
            lines: lines.clone(),
            opening: Arc::new(session.opening().iter().map(Line::of).collect()),
            snapshot: Arc::new(RwLock::new(session.snapshot())),
            corpus_wav: session
                .corpus()
                .map(|c| Bytes::from(encode_wav(c.samples(), c.sample_rate()))),
            finished: Arc::new(RwLock::new(None)),
        };
        let app = Router::new()
            .route("/session", get(session_ws))
            .route("/corpus", get(corpus))
            .route("/snapshot", get(snapshot))
            .with_state(state.clone());

        let interrupted = watch_ctrl_c();
        drop(tx);

        let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = done_rx.await;
                })
                .await
        });

        let loop_state = state.clone();
        let result = tokio::task::spawn_blocking(move || {
            let emit_state = loop_state.clone();
            run_loop(
                session,
                rx,
                interrupted,
                log,
                move |m| {
                    let line = Arc::new(Line::of(m));
                    if line.bye {
                        *emit_state.finished.write().expect("lock") = Some(line.clone());
                    }
                    let _ = emit_state.lines.send(line);
                },
                move |s| *loop_state.snapshot.write().expect("lock") = s.snapshot(),
            )
        })
        .await
        .map_err(|e| CliError::Data(format!("session thread failed: {e}")))?;

        let _ = done_tx.send(());
        // Clients leave after the bye; don't wait forever on one that doesn't.
        let _ = tokio::time::timeout(Duration::from_secs(2), server).await;
        finish(result?)
    })
}

async fn session_ws(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut tx, mut rx) = socket.split();
    let mut lines = state.lines.subscribe();
    let text = |s: &str| WsMessage::Text(s.to_string().into());
    for line in state.opening.iter() {
        if tx.send(text(&line.text)).await.is_err() {
            return;
        }
    }
    let ended = state.finished.read().expect("lock").clone();
    if let Some(bye) = ended {
        let _ = tx.send(text(&bye.text)).await;
        let _ = tx.close().await;
        return;
    }
    // Replies to this client carry the last tick it has seen, so its stream stays ordered.
    let mut last_k = 0;
    loop {
        tokio::select! {
            line = lines.recv() => match line {
                Ok(line) => {
                    last_k = line.k;
                    if tx.send(text(&line.text)).await.is_err() || line.bye {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let msg = Message::Error { k: last_k, message: format!("client fell behind; {n} messages dropped"), fatal: false };
                    if tx.send(text(&Line::of(&msg).text)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = rx.next() => match incoming {
                Some(Ok(WsMessage::Text(body))) => {
                    for line in body.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        let problem = match decode_message(line) {
                            Ok(m) if m.is_control() => {
                                let _ = state.controls.send(Ok(m));
                                continue;
                            }
                            Ok(m) => format!("`{}` is not a control message", m.type_name()),
                            Err(e) => e.to_string(),
                        };
                        let msg = Message::Error { k: last_k, message: problem, fatal: false };
                        let _ = tx.send(text(&Line::of(&msg).text)).await;
                    }
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = tx.close().await;
}

async fn corpus(State(state): State<AppState>) -> Response {
    match state.corpus_wav {
        Some(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        None => (StatusCode::NOT_FOUND, "sonification is off for this session\n").into_response(),
    }
}

async fn snapshot(State(state): State<AppState>) -> Response {
    let text = state.snapshot.read().expect("lock").clone();
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}
