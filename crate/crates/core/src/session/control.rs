//! Session state machine: Idle → Registering → Ready → Presenting →
//! Terminated, driven by operator commands and by incoming frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{RegistrationProgress, Session, SessionError, SessionSnapshot, Step};
use super::log::{HeaderRecord, LogRecord, PhaseRecord, LOG_SCHEMA};
use crate::advisor::AdviceEvent;
use crate::config::EngineConfig;
use crate::frame::FrameObservation;
use crate::registration::{AudienceLayout, RegistrationError, SweepState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Registering,
    Ready,
    Presenting,
    Terminated,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::Registering => "registering",
            Phase::Ready => "ready",
            Phase::Presenting => "presenting",
            Phase::Terminated => "terminated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPhase {
    pub phase: Phase,
    pub muted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCommand {
    StartRegistration,
    StopRegistration,
    BuildAudienceMap,
    StartPresentation,
    MuteToggle,
    Terminate,
}

impl ControlCommand {
    pub const ALL: [ControlCommand; 6] = [
        ControlCommand::StartRegistration,
        ControlCommand::StopRegistration,
        ControlCommand::BuildAudienceMap,
        ControlCommand::StartPresentation,
        ControlCommand::MuteToggle,
        ControlCommand::Terminate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlCommand::StartRegistration => "start_registration",
            ControlCommand::StopRegistration => "stop_registration",
            ControlCommand::BuildAudienceMap => "build_audience_map",
            ControlCommand::StartPresentation => "start_presentation",
            ControlCommand::MuteToggle => "mute_toggle",
            ControlCommand::Terminate => "terminate",
        }
    }
}

impl fmt::Display for ControlCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PhaseError {
    #[error("{command} is not allowed while {phase}")]
    Illegal { command: ControlCommand, phase: Phase },
    #[error("no audience members found in the sweep")]
    EmptyAudience,
    #[error("registration failed: {0}")]
    Registration(RegistrationError),
}

/// Receives advice prompts for delivery to the speaker, e.g. speech output.
pub trait AdviceSink: Send {
    fn deliver(&mut self, event: &AdviceEvent);
}

/// Discards prompts; used for headless runs and replay.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl AdviceSink for NullSink {
    fn deliver(&mut self, _event: &AdviceEvent) {}
}

/// Collects delivered prompts in memory.
#[derive(Debug, Default, Clone)]
pub struct CollectSink(pub std::sync::Arc<std::sync::Mutex<Vec<AdviceEvent>>>);

impl AdviceSink for CollectSink {
    fn deliver(&mut self, event: &AdviceEvent) {
        self.0.lock().expect("sink lock").push(event.clone());
    }
}

/// Result of an accepted command.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub state: SessionPhase,
    /// Set by `BuildAudienceMap`: members ordered left to right.
    pub layout: Option<AudienceLayout>,
    pub records: Vec<LogRecord>,
}

/// Everything produced by handing one frame to the controller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutcome {
    pub records: Vec<LogRecord>,
    /// Advice raised by this frame, delivered or not.
    pub advice: Vec<AdviceEvent>,
    /// Present when the snapshot cadence is due.
    pub snapshot: Option<SessionSnapshot>,
}

/// Owns all mutable session state. Not shared: a single worker drives it and
/// everything else talks to that worker.
pub struct SessionController {
    cfg: EngineConfig,
    state: SessionPhase,
    sweep: SweepState,
    sweep_frames: u64,
    capturing: bool,
    layout: Option<AudienceLayout>,
    session: Option<Session>,
    clock: u64,
    next_snapshot: u64,
    sink: Box<dyn AdviceSink>,
}

impl SessionController {
    /// A controller awaiting registration.
    pub fn new(cfg: EngineConfig) -> Self {
        Self {
            sweep: SweepState::new(cfg.registration.clone()),
            cfg,
            state: SessionPhase {
                phase: Phase::Idle,
                muted: false,
            },
            sweep_frames: 0,
            capturing: false,
            layout: None,
            session: None,
            clock: 0,
            next_snapshot: 0,
            sink: Box::new(NullSink),
        }
    }

    /// A controller with a layout from an earlier registration, ready to
    /// present.
    pub fn with_layout(cfg: EngineConfig, layout: AudienceLayout) -> Self {
        let mut c = Self::new(cfg);
        c.layout = Some(layout);
        c.state.phase = Phase::Ready;
        c
    }

    /// Moves the session clock forward to `t` (never back). Live adapters
    /// call this with arrival time; frames advance it implicitly.
    pub fn advance_clock(&mut self, t: u64) {
        self.clock = self.clock.max(t);
    }

    pub fn set_sink(&mut self, sink: Box<dyn AdviceSink>) {
        self.sink = sink;
    }

    pub fn state(&self) -> SessionPhase {
        self.state
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn layout(&self) -> Option<&AudienceLayout> {
        self.layout.as_ref()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// First log record for this controller.
    pub fn header(&self, source: impl Into<String>) -> LogRecord {
        LogRecord::Header(HeaderRecord {
            t: self.clock,
            phase: self.state.phase,
            schema: LOG_SCHEMA,
            source: source.into(),
            config: self.cfg.clone(),
            layout: self.layout.clone(),
        })
    }

    fn transition(&mut self, command: ControlCommand, phase: Phase, layout: Option<AudienceLayout>) -> LogRecord {
        self.state.phase = phase;
        LogRecord::Phase(PhaseRecord {
            t: self.clock,
            phase,
            command,
            muted: self.state.muted,
            layout,
        })
    }

    fn illegal(&self, command: ControlCommand) -> PhaseError {
        PhaseError::Illegal {
            command,
            phase: self.state.phase,
        }
    }

    /// Applies an operator command at the current session clock.
    pub fn control(&mut self, command: ControlCommand) -> Result<ControlOutcome, PhaseError> {
        self.control_at(command, None)
    }

    /// As [`control`](Self::control); `Terminate` ends the stream at `end_t`
    /// rather than at the next expected frame time.
    pub fn control_at(&mut self, command: ControlCommand, end_t: Option<u64>) -> Result<ControlOutcome, PhaseError> {
        use ControlCommand::*;
        let phase = self.state.phase;
        let mut records = Vec::new();
        let mut layout = None;
        match (command, phase) {
            (StartRegistration, Phase::Idle) => {
                self.capturing = true;
                records.push(self.transition(command, Phase::Registering, None));
            }
            (StopRegistration, Phase::Registering) if self.capturing => {
                self.capturing = false;
                records.push(self.transition(command, Phase::Registering, None));
            }
            (BuildAudienceMap, Phase::Registering) => {
                let built = match self.sweep.finalize() {
                    Ok(l) => l,
                    Err(RegistrationError::EmptyAudience { .. }) => return Err(PhaseError::EmptyAudience),
                    Err(e) => return Err(PhaseError::Registration(e)),
                };
                self.capturing = false;
                self.layout = Some(built.clone());
                records.push(self.transition(command, Phase::Ready, Some(built.clone())));
                layout = Some(built);
            }
            (StartPresentation, Phase::Ready) => {
                let l = self.layout.clone().ok_or_else(|| self.illegal(command))?;
                let session = Session::new(self.cfg.clone(), l, self.clock)
                    .map_err(|e| PhaseError::Registration(RegistrationError::InvalidLayout(e.to_string())))?;
                self.session = Some(session);
                self.next_snapshot = self.clock;
                records.push(self.transition(command, Phase::Presenting, None));
            }
            (MuteToggle, Phase::Presenting) => {
                self.state.muted = !self.state.muted;
                records.push(self.transition(command, Phase::Presenting, None));
            }
            (Terminate, p) if p != Phase::Terminated => {
                if let Some(s) = self.session.as_mut() {
                    let end = end_t.unwrap_or_else(|| s.next_frame_time());
                    let step = s.finish(end);
                    self.clock = s.clock();
                    self.deliver(&step.advice);
                    records.extend(step.records);
                }
                self.capturing = false;
                records.push(self.transition(command, Phase::Terminated, None));
            }
            _ => return Err(self.illegal(command)),
        }
        Ok(ControlOutcome {
            state: self.state,
            layout,
            records,
        })
    }

    fn deliver(&mut self, advice: &[AdviceEvent]) {
        if !self.state.muted {
            for a in advice {
                self.sink.deliver(a);
            }
        }
    }

    /// Routes one frame by phase: sweep frames while registering and
    /// capturing, pipeline frames while presenting. Frames in any other phase
    /// are discarded.
    pub fn ingest(&mut self, frame: &FrameObservation) -> Result<FrameOutcome, SessionError> {
        let mut out = FrameOutcome::default();
        match self.state.phase {
            Phase::Registering if self.capturing => {
                self.sweep.ingest(frame)?;
                self.sweep_frames += 1;
                self.clock = self.clock.max(frame.t);
                out.records.push(LogRecord::Frame(super::log::FrameRecord {
                    phase: Phase::Registering,
                    frame: frame.clone(),
                }));
            }
            Phase::Presenting => {
                let s = self.session.as_mut().expect("presenting has a session");
                let Step { records, advice } = s.process_frame(frame)?;
                self.clock = s.clock();
                out.records = records;
                self.deliver(&advice);
                out.advice = advice;
            }
            _ => return Ok(out),
        }
        if self.clock >= self.next_snapshot {
            let interval = self.cfg.session.snapshot_interval_ms().max(1);
            while self.next_snapshot <= self.clock {
                self.next_snapshot += interval;
            }
            out.snapshot = Some(self.snapshot());
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        match &self.session {
            Some(s) if self.state.phase == Phase::Presenting => s.snapshot(self.state),
            Some(s) => {
                let mut snap = s.snapshot(self.state);
                snap.provisional = false;
                snap
            }
            None => {
                let mut snap = SessionSnapshot::idle(self.clock, self.state);
                if matches!(self.state.phase, Phase::Registering | Phase::Ready) {
                    snap.registration = Some(RegistrationProgress {
                        frames: self.sweep_frames,
                        tracks: self.sweep.tracks().len() as u64,
                        capturing: self.capturing,
                    });
                }
                snap
            }
        }
    }
}
