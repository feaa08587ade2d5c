use std::time::Duration;

use gazecoach_core::config::EngineConfig;
use gazecoach_core::frame::Point;
use gazecoach_core::session::{simulate, LogRecord, Phase, SessionController, SessionLog};
use gazecoach_core::simulator::ScenarioSpec;
use gazecoach_service::api::router;
use gazecoach_service::worker::{spawn, Stamping};
use serde_json::{json, Value};
use tokio::net::TcpListener;

struct Server {
    base: String,
    http: reqwest::Client,
}

impl Server {
    async fn control(&self, command: &str) -> (u16, Value) {
        let r = self
            .http
            .post(format!("{}/v1/control", self.base))
            .json(&json!({ "command": command }))
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn ingest(&self, body: String) -> (u16, Value) {
        let r = self
            .http
            .post(format!("{}/v1/ingest", self.base))
            .body(body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }
}

/// Collects server-sent events until the stream closes.
async fn read_events(mut resp: reqwest::Response, first: tokio::sync::oneshot::Sender<()>) -> Vec<Value> {
    let mut first = Some(first);
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Ok(Some(chunk)) = resp.chunk().await {
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            if let Some(data) = block.lines().find_map(|l| l.strip_prefix("data: ")) {
                out.push(serde_json::from_str(data).unwrap());
                if let Some(tx) = first.take() {
                    let _ = tx.send(());
                }
            }
        }
    }
    out
}

fn frame_lines(log: &SessionLog, phase: Phase, shift: u64, gaze_off_audience: bool) -> Vec<String> {
    log.frames(phase)
        .map(|f| {
            let mut f = f.clone();
            f.t += shift;
            f.gaze.t += shift;
            if gaze_off_audience {
                // looking at the slides above the audience
                f.gaze.point = Point::new(640.0, 20.0);
            }
            let mut v = serde_json::to_value(&f).unwrap();
            v["type"] = json!("frame");
            v.to_string()
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn console_walks_a_session_over_http() {
    let sim = simulate(&ScenarioSpec::reference("static").unwrap(), &EngineConfig::default()).unwrap();
    let log_file = tempfile::NamedTempFile::new().unwrap();
    let (client, worker) = spawn(
        SessionController::new(EngineConfig::default()),
        Box::new(log_file.reopen().unwrap()),
        "test",
        Stamping::Source,
    )
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, router(client)).await.unwrap() });
    let s = Server {
        base,
        http: reqwest::Client::new(),
    };

    let events = s.http.get(format!("{}/v1/events", s.base)).send().await.unwrap();
    assert_eq!(events.headers()["content-type"], "text/event-stream");
    let (first_tx, first_rx) = tokio::sync::oneshot::channel();
    let events = tokio::spawn(read_events(events, first_tx));
    tokio::time::timeout(Duration::from_secs(5), first_rx).await.unwrap().unwrap();

    // before registration
    assert_eq!(s.get("/v1/layout").await.0, 404);
    let (code, body) = s.control("start_presentation").await;
    assert_eq!(code, 409);
    assert_eq!(body["phase"], "idle");
    assert_eq!(body["schema"], 1);
    assert_eq!(s.control("launch").await.0, 400);
    let (code, body) = s.get("/v1/snapshot").await;
    assert_eq!((code, &body["type"], &body["phase"]), (200, &json!("snapshot"), &json!("idle")));

    // registration
    let (code, body) = s.control("start_registration").await;
    assert_eq!((code, &body["state"]["phase"]), (200, &json!("registering")));
    let sweep = frame_lines(&sim.sweep_log, Phase::Registering, 0, false);
    let (code, body) = s.ingest(sweep.join("\n")).await;
    assert_eq!((code, body["frames"].as_u64()), (200, Some(sweep.len() as u64)));
    assert_eq!(s.ingest("{\"type\":\"frame\"".into()).await.0, 400);
    let (_, snap) = s.get("/v1/snapshot").await;
    assert_eq!(snap["registration"]["frames"], sweep.len());
    assert_eq!(s.control("stop_registration").await.0, 200);
    let (code, body) = s.control("build_audience_map").await;
    assert_eq!((code, &body["state"]["phase"]), (200, &json!("ready")));
    let members = body["layout"]["members"].as_array().unwrap().clone();
    assert_eq!(members.len(), 6);
    let offsets: Vec<f64> = members.iter().map(|m| m["offset"].as_f64().unwrap()).collect();
    assert!(offsets.windows(2).all(|w| w[0] < w[1]), "{offsets:?}");
    let (code, body) = s.get("/v1/layout").await;
    assert_eq!((code, body["layout"]["members"].as_array().unwrap().len()), (200, 6));

    // presentation: eyes on the slides the whole time
    assert_eq!(s.control("start_presentation").await.0, 200);
    let start = s.get("/v1/snapshot").await.1["t"].as_u64().unwrap();
    let lines = frame_lines(&sim.log, Phase::Presenting, start, true);
    let (_, body) = s.ingest(lines[..=900].join("\n")).await;
    assert_eq!(body["rejected"], json!([]));
    let (code, body) = s.control("mute_toggle").await;
    assert_eq!((code, &body["state"]["muted"]), (200, &json!(true)));
    s.ingest(lines[901..1800].join("\n")).await;
    let (_, body) = s.ingest(lines[5].clone()).await;
    assert_eq!(body["rejected"].as_array().unwrap().len(), 1);
    let (code, body) = s.control("terminate").await;
    assert_eq!((code, &body["state"]["phase"]), (200, &json!("terminated")));

    let events = tokio::time::timeout(Duration::from_secs(5), events).await.unwrap().unwrap();
    assert!(events.iter().all(|e| e["schema"] == 1));
    assert_eq!(events[0]["type"], "snapshot");
    let phases: Vec<&str> = events
        .iter()
        .filter(|e| e["type"] == "phase")
        .map(|e| e["command"].as_str().unwrap())
        .collect();
    assert_eq!(
        phases,
        ["start_registration", "stop_registration", "build_audience_map", "start_presentation", "mute_toggle", "terminate"]
    );
    let advice: Vec<(u64, bool)> = events
        .iter()
        .filter(|e| e["type"] == "advice")
        .map(|e| (e["t"].as_u64().unwrap() - start, e["speak"].as_bool().unwrap()))
        .collect();
    assert_eq!(advice, [(30_000, true), (60_000, false)]);
    assert!(events.iter().any(|e| e["type"] == "error"));
    assert!(events.iter().filter(|e| e["type"] == "snapshot" && e["phase"] == "presenting").count() > 100);
    assert_eq!(events.last().unwrap()["type"], "phase");

    let summary = worker.join().unwrap().unwrap();
    assert_eq!(summary.state.phase, Phase::Terminated);
    assert_eq!(summary.counters.frames, 1800);
    assert_eq!(summary.rejected.len(), 1);
    // muted advice is still logged
    let log = SessionLog::load(log_file.path()).unwrap();
    assert_eq!(log.advice().count(), 2);
    assert_eq!(log.records.iter().filter(|r| matches!(r, LogRecord::Phase(_))).count(), 6);
    assert_eq!(s.control("start_registration").await.0, 503);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn separate_gaze_records_are_paired_on_ingest() {
    let sim = simulate(&ScenarioSpec::reference("slow-pan").unwrap(), &EngineConfig::default()).unwrap();
    let log_file = tempfile::NamedTempFile::new().unwrap();
    let (client, worker) = spawn(
        SessionController::with_layout(sim.config.clone(), sim.layout.clone()),
        Box::new(log_file.reopen().unwrap()),
        "test",
        Stamping::Source,
    )
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, router(client)).await.unwrap() });
    let s = Server {
        base,
        http: reqwest::Client::new(),
    };
    assert_eq!(s.control("start_presentation").await.0, 200);
    let mut body = String::new();
    for f in sim.log.frames(Phase::Presenting) {
        let mut v = serde_json::to_value(f).unwrap();
        v["type"] = json!("frame");
        v.as_object_mut().unwrap().remove("gaze");
        body += &format!("{v}\n");
        let mut g = serde_json::to_value(f.gaze).unwrap();
        g["type"] = json!("gaze");
        body += &format!("{g}\n");
    }
    let (code, report) = s.ingest(body).await;
    assert_eq!(code, 200);
    assert_eq!(report["records"], 3600);
    s.control("terminate").await;
    worker.join().unwrap().unwrap();
    // attention matches the inline-gaze run frame for frame
    let log = SessionLog::load(log_file.path()).unwrap();
    let got: Vec<_> = log.attention().map(|a| &a.attention).collect();
    let want: Vec<_> = sim.log.attention().map(|a| &a.attention).collect();
    assert_eq!(got, want);
}
