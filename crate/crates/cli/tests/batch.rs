use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use socsim_core::session::{decode_message, Message};
use socsim_core::sonify::read_wav;
use socsim_core::stats::{criticality_report, CriticalityReport, EnsembleSource, EventEnsemble};
use socsim_core::CascadeEvent;

const OSLO_BUDGET: Duration = Duration::from_secs(60);

fn socsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socsim")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn events_in(path: &Path) -> Vec<CascadeEvent> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| match decode_message(l).unwrap() {
            Message::Event { event, .. } => Some(event),
            _ => None,
        })
        .collect()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let o = socsim(&["simulate", "--model", "sandpile", "--size", "64", "--events", "1000", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let events = events_in(&a);
    assert_eq!(events.len(), 1000);
    assert!(events.iter().enumerate().all(|(i, e)| e.event_id == i as u64 && e.is_consistent()));
    let snap = std::fs::read_to_string(dir.path().join("a.jsonl.snapshot")).unwrap();
    assert!(snap.starts_with("sandpile 64 64 4\n"));
    assert_eq!(snap.lines().count(), 65);
}

#[test]
fn simulate_rejects_alpha_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.jsonl");
    let o = socsim(&["simulate", "--model", "springblock", "--alpha", "0.3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("(0, 0.25]"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing is written for a rejected config");
}

#[test]
fn simulate_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# stats run\nmodel = springblock\nsize = 8\nalpha = 0.2\nevents = 50\nseed = 3\n").unwrap();
    let out = dir.path().join("e.jsonl");
    let o = socsim(&["simulate", "--config", s(&cfg), "--events", "20", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = events_in(&out);
    assert_eq!(events.len(), 20);
    assert!(events.iter().all(|e| e.size >= 1 && e.moment.unwrap() >= 1.0));

    std::fs::write(&cfg, "model = sandpile\nwobble = 2\n").unwrap();
    let o = socsim(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wobble"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "model = sandpile\nthreshold = 2\nmax_sweeps = 50\n").unwrap();
    let o = socsim(&["simulate", "--config", s(&cfg), "--size", "16", "--events", "100000", "--out", s(&dir.path().join("e.jsonl"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn oslo_run_and_stats_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("oslo.jsonl");
    let start = Instant::now();
    let o = socsim(&["simulate", "--model", "oslo", "--size", "32", "--events", "100000", "--seed", "1", "--out", s(&events)]);
    let took = start.elapsed();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(took <= OSLO_BUDGET, "oslo run took {took:?}");

    let before = std::fs::read(&events).unwrap();
    let (report, csv) = (dir.path().join("report.json"), dir.path().join("hist.csv"));
    let o = socsim(&["stats", "--in", s(&events), "--s-min", "3", "--report", s(&report), "--csv", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&events).unwrap(), before, "stats must not touch its input");

    let got: CriticalityReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let source = EnsembleSource {
        model: "oslo".into(),
        config: got.source.config.clone(),
        seed: 1,
    };
    let want = criticality_report(&EventEnsemble::from_events(&events_in(&events), source), 3, 5).unwrap();
    assert_eq!(got, want);
    assert!(got.source.config.contains("\"length\":32"));
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("bin_center,density\n"));
    assert_eq!(csv.lines().count(), got.histogram.len() + 1);
}

#[test]
fn stats_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = socsim(&["stats", "--in", s(&dir.path().join("missing.jsonl")), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"));

    let few = dir.path().join("few.jsonl");
    let o = socsim(&["simulate", "--model", "sandpile", "--size", "4", "--events", "10", "--out", s(&few)]);
    assert!(o.status.success());
    let o = socsim(&["stats", "--in", s(&few), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("too few"), "{}", stderr(&o));
    assert!(!report.exists());

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"t\":\"hello\",\"k\":0,\"protocol\":\"socsim/1\"}\n{\"t\":\"event\",\"k\":\n").unwrap();
    let o = socsim(&["stats", "--in", s(&bad), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("bad.jsonl:2"), "{}", stderr(&o));
}

#[test]
fn sonify_empty_events_is_silence() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let map = dir.path().join("map.cfg");
    std::fs::write(&map, "min_duration = 2.5\n").unwrap();
    let wav = dir.path().join("out.wav");
    let o = socsim(&["sonify", "--in", s(&empty), "--out", s(&wav), "--config", s(&map)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (samples, sr) = read_wav(&wav).unwrap();
    assert_eq!(samples.len(), (2.5 * f64::from(sr)).round() as usize);
    assert!(samples.iter().all(|&x| x == 0.0));
}

#[test]
fn sonify_is_deterministic_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("e.jsonl");
    // Dense input: every event lands in the same few milliseconds.
    let o = socsim(&["simulate", "--model", "sandpile", "--size", "20", "--events", "4000", "--seed", "2", "--out", s(&events)]);
    assert!(o.status.success());
    let map = dir.path().join("map.cfg");
    std::fs::write(&map, "tick_seconds = 0.0005\ngain = 1\ndensity_cap = 64\n").unwrap();
    let (a, b, sched) = (dir.path().join("a.wav"), dir.path().join("b.wav"), dir.path().join("s.jsonl"));
    for out in [&a, &b] {
        let o = socsim(&["sonify", "--in", s(&events), "--out", s(out), "--config", s(&map), "--schedule", s(&sched)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (samples, _) = read_wav(&a).unwrap();
    assert!(samples.iter().all(|x| x.abs() <= 1.0));
    assert!(samples.iter().any(|&x| x != 0.0));
    assert!(std::fs::read_to_string(&sched).unwrap().lines().count() > 1000);

    // A corpus file stands in for the synthetic one.
    let corpus = dir.path().join("corpus.wav");
    let tone: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.05).sin() * 0.5).collect();
    socsim_core::sonify::write_wav(&tone, 8000, &corpus).unwrap();
    let o = socsim(&["sonify", "--in", s(&events), "--corpus", s(&corpus), "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_wav(&a).unwrap().1, 8000);
}

#[test]
fn replay_of_golden_log_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("events.jsonl");
    let o = socsim(&["replay", "--log", s(&golden("golden.slog")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(golden("golden_events.jsonl")).unwrap());

    let all = dir.path().join("all.jsonl");
    let o = socsim(&["replay", "--log", s(&golden("golden.slog")), "--out", s(&all), "--all"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&all).unwrap();
    assert!(text.lines().last().unwrap().contains("\"reason\":\"max_ticks\""));
    assert_eq!(text.lines().filter(|l| l.contains("\"t\":\"tick\"")).count(), 400);
}

#[test]
fn replay_refuses_unterminated_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("open.slog");
    let header = std::fs::read_to_string(golden("golden.slog")).unwrap().lines().next().unwrap().replace(",\"max_ticks\":400", "");
    std::fs::write(&log, format!("{header}\n{{\"t\":\"control.set_drive\",\"k\":3,\"v\":[1.0,0.0]}}\n")).unwrap();
    let o = socsim(&["replay", "--log", s(&log), "--out", s(&dir.path().join("e.jsonl"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("no stop"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(socsim(&[]).status.code(), Some(1));
    assert_eq!(socsim(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(socsim(&["launch"]).status.code(), Some(1));
    let help = socsim(&["serve", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--stdio"));
}
