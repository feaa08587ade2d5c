//! The session worker: a single thread that owns the controller, the frame
//! assembler and the log writer. Everything else talks to it through
//! [`ServiceClient`].

use std::io::Write;
use std::thread::JoinHandle;
use std::time::Instant;

use gazecoach_core::frame::FrameObservation;
use gazecoach_core::registration::AudienceLayout;
use gazecoach_core::session::{
    ControlCommand, FrameAssembler, IngestRecord, LogError, LogRecord, LogWriter, Phase, SessionController,
    SessionCounters, SessionPhase, SessionSnapshot,
};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::feed::{FeedBody, FeedMessage};

/// How live records get their session time.
#[derive(Debug, Clone, Copy)]
pub enum Stamping {
    /// Keep the `t` each record carries.
    Source,
    /// Replace `t` with milliseconds since `epoch` at the moment the worker
    /// receives the record.
    Arrival(Instant),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReply {
    pub state: SessionPhase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<AudienceLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlRejected {
    pub error: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejected {
    pub frame_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub frames: usize,
    pub rejected: Vec<Rejected>,
}

pub enum Request {
    Control {
        command: ControlCommand,
        reply: oneshot::Sender<Result<ControlReply, ControlRejected>>,
    },
    /// Complete frames from a recorded or simulated source.
    Frames(Vec<FrameObservation>),
    /// Raw live records, stamped and paired inside the worker.
    Ingest {
        records: Vec<IngestRecord>,
        reply: Option<oneshot::Sender<IngestReport>>,
    },
    /// The source is exhausted: flush pending frames and terminate at
    /// `end_t` (or one frame interval after the last frame).
    EndOfSource { end_t: Option<u64> },
    Snapshot(oneshot::Sender<SessionSnapshot>),
    Layout(oneshot::Sender<Option<AudienceLayout>>),
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session log: {0}")]
    Log(#[from] LogError),
    #[error("session worker stopped")]
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerSummary {
    pub state: SessionPhase,
    pub counters: SessionCounters,
    pub records: u64,
    pub rejected: Vec<Rejected>,
}

/// Cheap handle to the worker, cloned into every connection.
#[derive(Clone)]
pub struct ServiceClient {
    tx: mpsc::UnboundedSender<Request>,
    feed: broadcast::Sender<FeedMessage>,
    latest: watch::Receiver<SessionSnapshot>,
}

impl ServiceClient {
    pub async fn control(&self, command: ControlCommand) -> Result<Result<ControlReply, ControlRejected>, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.send(Request::Control { command, reply })?;
        rx.await.map_err(|_| ServiceError::Stopped)
    }

    pub async fn ingest(&self, records: Vec<IngestRecord>) -> Result<IngestReport, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.send(Request::Ingest {
            records,
            reply: Some(reply),
        })?;
        rx.await.map_err(|_| ServiceError::Stopped)
    }

    pub async fn snapshot(&self) -> Result<SessionSnapshot, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.send(Request::Snapshot(reply))?;
        rx.await.map_err(|_| ServiceError::Stopped)
    }

    pub async fn layout(&self) -> Result<Option<AudienceLayout>, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.send(Request::Layout(reply))?;
        rx.await.map_err(|_| ServiceError::Stopped)
    }

    pub fn send(&self, request: Request) -> Result<(), ServiceError> {
        self.tx.send(request).map_err(|_| ServiceError::Stopped)
    }

    /// Subscribes to pushed messages. The returned snapshot is the latest one
    /// published before the subscription.
    pub fn subscribe(&self) -> (SessionSnapshot, broadcast::Receiver<FeedMessage>) {
        let rx = self.feed.subscribe();
        (self.latest.borrow().clone(), rx)
    }

    /// Latest published snapshot, updated on every control command and at
    /// the snapshot cadence.
    pub fn status(&self) -> watch::Receiver<SessionSnapshot> {
        self.latest.clone()
    }
}

struct Worker {
    controller: SessionController,
    assembler: FrameAssembler,
    stamping: Stamping,
    log: LogWriter<Box<dyn Write + Send>>,
    records: u64,
    rejected: Vec<Rejected>,
    feed: broadcast::Sender<FeedMessage>,
    latest: watch::Sender<SessionSnapshot>,
}

/// Starts the worker thread. The header record is written immediately, at
/// the controller's current clock.
pub fn spawn(
    controller: SessionController,
    log: Box<dyn Write + Send>,
    source: &str,
    stamping: Stamping,
) -> Result<(ServiceClient, JoinHandle<Result<WorkerSummary, ServiceError>>), ServiceError> {
    let (tx, rx) = mpsc::unbounded_channel();
    let (feed, _) = broadcast::channel(1024);
    let (latest_tx, latest) = watch::channel(controller.snapshot());
    let mut worker = Worker {
        assembler: FrameAssembler::new(controller.config().session.pairing_tolerance_ms()),
        controller,
        stamping,
        log: LogWriter::new(log),
        records: 0,
        rejected: Vec::new(),
        feed: feed.clone(),
        latest: latest_tx,
    };
    let header = worker.controller.header(source);
    worker.write(&[header])?;
    worker.log.flush()?;
    let handle = std::thread::Builder::new()
        .name("session-worker".into())
        .spawn(move || worker.run(rx))
        .expect("spawn session worker");
    Ok((ServiceClient { tx, feed, latest }, handle))
}

impl Worker {
    fn run(mut self, mut rx: mpsc::UnboundedReceiver<Request>) -> Result<WorkerSummary, ServiceError> {
        while let Some(request) = rx.blocking_recv() {
            self.handle(request)?;
            if self.controller.state().phase == Phase::Terminated {
                break;
            }
        }
        if self.controller.state().phase != Phase::Terminated {
            // every client is gone: close the session as if the source ended
            self.end_of_source(None)?;
        }
        self.log.flush()?;
        Ok(WorkerSummary {
            state: self.controller.state(),
            counters: self.controller.session().map(|s| s.counters()).unwrap_or_default(),
            records: self.records,
            rejected: self.rejected,
        })
    }

    fn handle(&mut self, request: Request) -> Result<(), ServiceError> {
        match request {
            Request::Control { command, reply } => {
                if command == ControlCommand::Terminate {
                    let frames = self.assembler.flush();
                    self.frames(frames, &mut IngestReport::default())?;
                }
                let result = self.control(command, None)?;
                let _ = reply.send(result);
            }
            Request::Frames(frames) => {
                let mut report = IngestReport::default();
                self.frames(frames, &mut report)?;
            }
            Request::Ingest { records, reply } => {
                let mut report = IngestReport {
                    records: records.len(),
                    ..Default::default()
                };
                for r in records {
                    let r = self.stamp(r);
                    let frames = self.assembler.push(r);
                    self.frames(frames, &mut report)?;
                }
                self.log.flush()?;
                if let Some(reply) = reply {
                    let _ = reply.send(report);
                }
            }
            Request::EndOfSource { end_t } => self.end_of_source(end_t)?,
            Request::Snapshot(reply) => {
                let _ = reply.send(self.controller.snapshot());
            }
            Request::Layout(reply) => {
                let _ = reply.send(self.controller.layout().cloned());
            }
        }
        Ok(())
    }

    fn end_of_source(&mut self, end_t: Option<u64>) -> Result<(), ServiceError> {
        let frames = self.assembler.flush();
        self.frames(frames, &mut IngestReport::default())?;
        if self.controller.state().phase != Phase::Terminated {
            self.control(ControlCommand::Terminate, end_t)?.ok();
        }
        self.log.flush()?;
        Ok(())
    }

    fn stamp(&self, record: IngestRecord) -> IngestRecord {
        let Stamping::Arrival(epoch) = self.stamping else {
            return record;
        };
        let t = (epoch.elapsed().as_millis() as u64).max(self.controller.clock());
        match record {
            IngestRecord::Frame(mut f) => {
                f.t = t;
                if let Some(g) = f.gaze.as_mut() {
                    g.t = t;
                }
                IngestRecord::Frame(f)
            }
            IngestRecord::Gaze(mut g) => {
                g.t = t;
                IngestRecord::Gaze(g)
            }
        }
    }

    fn control(
        &mut self,
        command: ControlCommand,
        end_t: Option<u64>,
    ) -> Result<Result<ControlReply, ControlRejected>, ServiceError> {
        match self.controller.control_at(command, end_t) {
            Ok(outcome) => {
                self.write(&outcome.records)?;
                self.log.flush()?;
                self.publish_snapshot(self.controller.snapshot());
                Ok(Ok(ControlReply {
                    state: outcome.state,
                    layout: outcome.layout,
                }))
            }
            Err(e) => Ok(Err(ControlRejected {
                error: e.to_string(),
                phase: self.controller.state().phase,
            })),
        }
    }

    fn frames(&mut self, frames: Vec<FrameObservation>, report: &mut IngestReport) -> Result<(), ServiceError> {
        for f in frames {
            report.frames += 1;
            match self.controller.ingest(&f) {
                Ok(out) => {
                    self.write(&out.records)?;
                    if let Some(s) = out.snapshot {
                        self.publish_snapshot(s);
                    }
                }
                Err(e) => {
                    tracing::warn!(frame_id = f.frame_id, "frame rejected: {e}");
                    let r = Rejected {
                        frame_id: f.frame_id,
                        error: e.to_string(),
                    };
                    let _ = self.feed.send(FeedMessage::new(FeedBody::Error {
                        t: f.t,
                        frame_id: f.frame_id,
                        message: r.error.clone(),
                    }));
                    report.rejected.push(r.clone());
                    self.rejected.push(r);
                }
            }
        }
        Ok(())
    }

    /// Appends records to the log and forwards phase changes and advice to
    /// subscribers.
    fn write(&mut self, records: &[LogRecord]) -> Result<(), ServiceError> {
        let speak = !self.controller.state().muted;
        for r in records {
            self.log.append(r)?;
            self.records += 1;
            let body = match r {
                LogRecord::Phase(p) => FeedBody::Phase(p.clone()),
                LogRecord::Advice(a) => {
                    if speak {
                        tracing::info!(t = a.event.t, "advice: {}", a.event.prompt);
                    }
                    FeedBody::Advice {
                        event: a.event.clone(),
                        speak,
                    }
                }
                _ => continue,
            };
            let _ = self.feed.send(FeedMessage::new(body));
        }
        Ok(())
    }

    fn publish_snapshot(&mut self, snapshot: SessionSnapshot) {
        let _ = self.feed.send(FeedMessage::new(FeedBody::Snapshot(snapshot.clone())));
        self.latest.send_replace(snapshot);
    }
}
