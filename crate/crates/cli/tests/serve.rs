use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use socsim_core::session::{decode_message, ByeReason, Message, SessionLog};
use tokio_tungstenite::tungstenite::Message as WsMessage;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spawn(args: &[&str]) -> Child {
    Command::new(env!("CARGO_BIN_EXE_socsim"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn messages(text: &str) -> Vec<Message> {
    text.lines().map(|l| decode_message(l).unwrap()).collect()
}

fn replayed(log: &Path, dir: &Path) -> String {
    let out = dir.join("replayed.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_socsim"))
        .args(["replay", "--log", s(log), "--out", s(&out)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(out).unwrap()
}

fn events_and_headers(stream: &str) -> String {
    stream
        .lines()
        .filter(|l| matches!(decode_message(l).unwrap(), Message::Hello { .. } | Message::Config { .. } | Message::Event { .. }))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn invalid_config_is_rejected_before_binding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model = springblock\nalpha = 0.5\n").unwrap();
    // Holding the port means a bind attempt would fail with an I/O error (2), not a config error (1).
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_socsim"))
        .args(["serve", "--config", s(&cfg), "--port", &port])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(0, 0.25]"));

    std::fs::write(&cfg, "model = sandpile\ntick_seconds = 2\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_socsim"))
        .args(["serve", "--config", s(&cfg), "--port", &port])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stdio_session_stops_cleanly_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "model = springblock\ntick_seconds = 0.005\nsonify = true\n").unwrap();
    let log = dir.path().join("s.slog");
    let mut child = spawn(&["serve", "--config", s(&cfg), "--stdio", "--log", s(&log)]);
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());

    let mut first = String::new();
    stdout.read_line(&mut first).unwrap();
    assert!(matches!(decode_message(&first).unwrap(), Message::Hello { .. }));
    writeln!(stdin, "{{\"t\":\"control.set_drive\",\"v\":[300,400]}}").unwrap();
    std::thread::sleep(Duration::from_millis(300));
    writeln!(stdin, "{{\"t\":\"frobnicate\"}}").unwrap();
    writeln!(stdin, "{{\"t\":\"tick\",\"k\":1,\"size\":0,\"events\":0,\"paused\":false}}").unwrap();
    std::thread::sleep(Duration::from_millis(100));
    writeln!(stdin, "{{\"t\":\"control.stop\"}}").unwrap();
    let mut rest = String::new();
    stdout.read_to_string(&mut rest).unwrap();
    assert!(child.wait().unwrap().success());

    let stream = first + &rest;
    let msgs = messages(&stream);
    assert!(matches!(msgs.last(), Some(Message::Bye { reason: ByeReason::Stop, .. })));
    assert!(msgs.windows(2).all(|w| w[0].tick_index() <= w[1].tick_index()));
    let errors: Vec<&Message> = msgs.iter().filter(|m| matches!(m, Message::Error { .. })).collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|m| matches!(m, Message::Error { fatal: false, .. })));
    let events = msgs.iter().filter(|m| matches!(m, Message::Event { .. })).count();
    assert!(events > 0);
    assert_eq!(msgs.iter().filter(|m| matches!(m, Message::Grains { .. })).count(), events);

    let saved = SessionLog::read(&log).unwrap();
    assert!(saved.is_terminated());
    assert_eq!(saved.records.len(), 2);
    assert_eq!(replayed(&log, dir.path()), events_and_headers(&stream));
}

#[test]
fn closing_stdin_ends_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "model = oslo\nsize = 8\ntick_seconds = 0.005\n").unwrap();
    let log = dir.path().join("s.slog");
    let mut child = spawn(&["serve", "--config", s(&cfg), "--stdio", "--log", s(&log)]);
    drop(child.stdin.take());
    let mut out = String::new();
    child.stdout.take().unwrap().read_to_string(&mut out).unwrap();
    assert!(child.wait().unwrap().success());
    assert!(matches!(messages(&out).last(), Some(Message::Bye { reason: ByeReason::Stop, .. })));
    assert!(SessionLog::read(&log).unwrap().is_terminated());
}

#[cfg(unix)]
#[test]
fn interrupt_gives_bye_and_intact_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "model = sandpile\nsize = 16\ntick_seconds = 0.005\ngrains_per_tick = 3\n").unwrap();
    let log = dir.path().join("s.slog");
    let mut child = spawn(&["serve", "--config", s(&cfg), "--stdio", "--log", s(&log)]);
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let mut rest = String::new();
    stdout.read_to_string(&mut rest).unwrap();
    assert!(child.wait().unwrap().success());
    let stream = line + &rest;
    assert!(matches!(messages(&stream).last(), Some(Message::Bye { reason: ByeReason::Stop, .. })));
    let saved = SessionLog::read(&log).unwrap();
    assert!(saved.is_terminated());
    assert_eq!(replayed(&log, dir.path()), events_and_headers(&stream));
}

/// Waits for the "listening on" line and returns the bound address.
fn listening_addr(child: &mut Child) -> String {
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .and_then(|r| r.strip_suffix("/session"))
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    std::thread::spawn(move || {
        let mut sink = String::new();
        let _ = err.read_to_string(&mut sink);
    });
    addr
}

async fn http_get(addr: &str, path: &str) -> (u16, Vec<u8>) {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8_lossy(&raw[..split]).into_owned();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let mut body = raw[split + 4..].to_vec();
    if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        body = dechunk(&body);
    }
    (status, body)
}

fn dechunk(mut data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = data.windows(2).position(|w| w == b"\r\n").unwrap();
        let size = usize::from_str_radix(std::str::from_utf8(&data[..eol]).unwrap().trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&data[eol + 2..eol + 2 + size]);
        data = &data[eol + 4 + size..];
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_session_and_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "model = springblock\ntick_seconds = 0.01\nsonify = true\n").unwrap();
    let log = dir.path().join("s.slog");
    let mut child = spawn(&["serve", "--config", s(&cfg), "--port", "0", "--log", s(&log)]);
    let addr = listening_addr(&mut child);

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    let mut opening = Vec::new();
    while opening.len() < 2 {
        if let WsMessage::Text(t) = ws.next().await.unwrap().unwrap() {
            opening.push(decode_message(t.as_str()).unwrap());
        }
    }
    assert!(matches!(opening[0], Message::Hello { .. }));
    assert!(matches!(opening[1], Message::Config { .. }));

    let (status, wav) = http_get(&addr, "/corpus").await;
    assert_eq!(status, 200);
    assert_eq!(&wav[..4], b"RIFF");
    let (samples, sr) = socsim_core::sonify::decode_wav(&wav).unwrap();
    assert_eq!(sr, 22_050);
    assert!(!samples.is_empty());
    let (status, snap) = http_get(&addr, "/snapshot").await;
    assert_eq!(status, 200);
    assert!(String::from_utf8(snap).unwrap().starts_with("springblock 5 0.25\n"));
    assert_eq!(http_get(&addr, "/nowhere").await.0, 404);

    ws.send(WsMessage::Text("{\"t\":\"control.set_drive\",\"v\":[300,400]}".into())).await.unwrap();
    ws.send(WsMessage::Text("{\"t\":\"hello\",\"k\":0,\"protocol\":\"socsim/1\"}".into())).await.unwrap();
    let mut saw_event = false;
    let mut saw_error = false;
    let mut last_k = 0;
    loop {
        let msg = match ws.next().await.unwrap().unwrap() {
            WsMessage::Text(t) => decode_message(t.as_str()).unwrap(),
            WsMessage::Close(_) => panic!("closed before bye"),
            _ => continue,
        };
        assert!(msg.tick_index() >= last_k);
        last_k = msg.tick_index();
        match msg {
            Message::Event { .. } if !saw_event => {
                saw_event = true;
                ws.send(WsMessage::Text("{\"t\":\"control.stop\"}".into())).await.unwrap();
            }
            Message::Error { fatal: false, .. } => saw_error = true,
            Message::Bye { reason, .. } => {
                assert_eq!(reason, ByeReason::Stop);
                break;
            }
            _ => {}
        }
    }
    assert!(saw_event && saw_error);
    let status = tokio::task::spawn_blocking(move || child.wait().unwrap()).await.unwrap();
    assert!(status.success());
    let saved = SessionLog::read(&log).unwrap();
    assert!(saved.is_terminated());
    assert!(matches!(saved.records[0].control, Message::SetDrive { .. }));
}

#[tokio::test(flavor = "multi_thread")]
async fn corpus_is_absent_without_sonification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "model = sandpile\nsize = 8\nmax_ticks = 200\ntick_seconds = 0.01\n").unwrap();
    let mut child = spawn(&["serve", "--config", s(&cfg), "--port", "0"]);
    let addr = listening_addr(&mut child);
    assert_eq!(http_get(&addr, "/corpus").await.0, 404);
    let (status, snap) = http_get(&addr, "/snapshot").await;
    assert_eq!(status, 200);
    assert_eq!(String::from_utf8(snap).unwrap().lines().count(), 9);
    let status = tokio::task::spawn_blocking(move || child.wait().unwrap()).await.unwrap();
    assert!(status.success());
}
