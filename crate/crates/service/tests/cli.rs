use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use gazecoach_core::session::{LogRecord, Phase, SessionLog};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gazecoach"))
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "gazecoach {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn derived(path: &Path) -> Vec<String> {
    SessionLog::load(path).unwrap().derived_lines()
}

#[test]
fn simulate_register_and_headless_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(
        &["simulate", "static", "-o", "sim.ndjson", "--truth", "truth.json", "--sweep-out", "sweep.ndjson", "--layout-out", "layout.json"],
        d,
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("static: 1800 frames"));
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["frames"].as_array().unwrap().len(), 1800);

    // registering the sweep log reproduces the simulator's layout
    ok(&["register", "sweep.ndjson", "-o", "registered.json"], d);
    assert_eq!(
        std::fs::read_to_string(d.join("layout.json")).unwrap(),
        std::fs::read_to_string(d.join("registered.json")).unwrap()
    );

    // a headless simulated run writes exactly the simulate log
    ok(&["run", "--source", "sim", "--scenario", "static", "--headless", "-o", "run.ndjson"], d);
    assert_eq!(
        std::fs::read_to_string(d.join("sim.ndjson")).unwrap(),
        std::fs::read_to_string(d.join("run.ndjson")).unwrap()
    );

    // replaying the log through the service regenerates its derived records
    ok(
        &["run", "--source", "log", "--input", "sim.ndjson", "--layout", "registered.json", "--headless", "-o", "replay.ndjson"],
        d,
    );
    assert_eq!(derived(&d.join("sim.ndjson")), derived(&d.join("replay.ndjson")));
    let out = ok(&["analyze", "replay.ndjson", "--verify"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("replay identical"));
}

#[test]
fn analyze_writes_one_row_per_closed_window() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "occlusion-heavy", "-o", "s.ndjson"], d);
    ok(&["analyze", "s.ndjson", "-o", "m.csv"], d);
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let log = SessionLog::load(d.join("s.ndjson")).unwrap();
    assert_eq!(csv.lines().count(), 1 + log.metrics().count());
    let stdout = ok(&["analyze", "s.ndjson"], d).stdout;
    assert_eq!(String::from_utf8(stdout).unwrap(), csv);
}

#[test]
fn bench_identify_writes_csv_and_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (file, extra) in [("par.csv", None), ("seq.csv", Some("--sequential"))] {
        let mut args = vec!["bench-identify", "fast-pan-with-blur", "--methods", "anchor,baseline", "--seeds", "1,2", "-o", file];
        args.extend(extra);
        ok(&args, d);
    }
    let rows = |f: &str| -> Vec<Vec<String>> {
        std::fs::read_to_string(d.join(f))
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(8).map(String::from).collect())
            .collect()
    };
    let par = rows("par.csv");
    assert_eq!(par[0][..3], ["scenario", "method", "seed"]);
    assert_eq!(par.len(), 5);
    assert_eq!(par, rows("seq.csv"));
    let md = std::fs::read_to_string(d.join("par.md")).unwrap();
    assert!(md.contains("| fast-pan-with-blur | anchor |"));

    let out = bin().args(["bench-identify", "static", "--methods", "anchor,oracle", "-o", "x.csv"]).current_dir(d).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_overrides_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("engine.toml"), "[advisor]\nr_p = 90.0\n\n[session]\nsnapshot_hz = 10.0\n").unwrap();
    let out = bin()
        .args(["--config", "engine.toml", "simulate", "static", "-o", "s.ndjson"])
        .current_dir(d)
        .output()
        .unwrap();
    if !out.status.success() {
        // surface the config field names if they ever change
        panic!("{}", String::from_utf8_lossy(&out.stderr));
    }
    let log = SessionLog::load(d.join("s.ndjson")).unwrap();
    assert_eq!(log.header().unwrap().config.advisor.r_p, 90.0);
    // with a 90% bar, the static scenario draws advice the defaults do not
    assert!(log.advice().count() > 0);

    std::fs::write(d.join("bad.toml"), "[advisor]\nrp = 1\n").unwrap();
    let out = bin().args(["--config", "bad.toml", "simulate", "static", "-o", "x"]).current_dir(d).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn interactive_run_requires_an_api_address() {
    let out = bin().args(["run", "--source", "sim", "--scenario", "static"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--api"));
}

/// Spawns the binary and waits for a stderr line containing `marker`,
/// returning the text after it. Later stderr output is drained in the
/// background.
fn spawn_and_wait(args: &[&str], dir: &Path, marker: &str) -> (Child, String) {
    let mut child = bin().args(args).current_dir(dir).stderr(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let found = loop {
        let line = lines.next().expect("process exited before listening").unwrap();
        if let Some(i) = line.find(marker) {
            break line[i + marker.len()..].trim().to_string();
        }
    };
    std::thread::spawn(move || for _ in lines {});
    (child, found)
}

fn wait(mut child: Child, limit: Duration) {
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            assert!(status.success());
            return;
        }
        assert!(start.elapsed() < limit, "process did not finish");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn live_socket_source_runs_headless_until_the_stream_closes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "static", "-o", "sim.ndjson", "--layout-out", "layout.json"], d);
    let (child, addr) = spawn_and_wait(
        &["run", "--source", "live", "--listen", "127.0.0.1:0", "--layout", "layout.json", "--stamp", "source", "--headless", "-o", "live.ndjson"],
        d,
        "frame ingestion listening on",
    );
    let sim = SessionLog::load(d.join("sim.ndjson")).unwrap();
    let mut stream = TcpStream::connect(&addr).unwrap();
    for r in &sim.records {
        if let LogRecord::Frame(f) = r {
            // session-log frame lines are valid ingestion records
            writeln!(stream, "{}", r.to_line()).unwrap();
            assert_eq!(f.phase, Phase::Presenting);
        }
    }
    drop(stream);
    wait(child, Duration::from_secs(60));
    assert_eq!(derived(&d.join("sim.ndjson")), derived(&d.join("live.ndjson")));
}

fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let r = reqwest::Client::new().post(format!("{base}{path}")).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    })
}

fn get(base: &str, path: &str) -> Value {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async { reqwest::get(format!("{base}{path}")).await.unwrap().json().await.unwrap() })
}

#[test]
fn console_drives_a_simulated_session_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (child, base) = spawn_and_wait(
        &["run", "--source", "sim", "--scenario", "slow-pan", "--api", "127.0.0.1:0", "-o", "s.ndjson"],
        d,
        "console API listening on",
    );
    let control = |c: &str| post(&base, "/v1/control", json!({ "command": c }));
    assert_eq!(control("start_registration").0, 200);
    // the sweep is released once registration starts
    let start = Instant::now();
    while get(&base, "/v1/snapshot")["registration"]["frames"].as_u64() != Some(240) {
        assert!(start.elapsed() < Duration::from_secs(20), "sweep not ingested");
        std::thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(control("stop_registration").0, 200);
    let (code, body) = control("build_audience_map");
    assert_eq!(code, 200);
    assert_eq!(body["layout"]["members"].as_array().unwrap().len(), 6);
    assert_eq!(control("start_presentation").0, 200);
    // the source ends the session by itself
    wait(child, Duration::from_secs(60));

    let log = SessionLog::load(d.join("s.ndjson")).unwrap();
    let commands: Vec<_> = log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Phase(p) => Some(p.command.name()),
            _ => None,
        })
        .collect();
    assert_eq!(
        commands,
        ["start_registration", "stop_registration", "build_audience_map", "start_presentation", "terminate"]
    );
    assert_eq!(log.frames(Phase::Registering).count(), 240);
    assert_eq!(log.frames(Phase::Presenting).count(), 1800);
    assert_eq!(log.metrics().filter(|m| m.rule == gazecoach_core::advisor::Rule::Insufficient).count(), 2);
}
