//! Session orchestration: the phase state machine, the per-frame pipeline,
//! the append-only session log, live ingestion, and deterministic replay.

mod control;
mod engine;
mod log;
mod source;

pub use control::{
    AdviceSink, CollectSink, ControlCommand, ControlOutcome, FrameOutcome, NullSink, Phase, PhaseError,
    SessionController, SessionPhase,
};
pub use engine::{RegistrationProgress, Session, SessionCounters, SessionError, SessionSnapshot, Step};
pub use log::{
    metrics_csv, AdviceRecord, AttentionRecord, DroppedRecord, FrameRecord, HeaderRecord, LogError, LogRecord,
    LogWriter, MetricsRecord, PhaseRecord, SessionLog, LOG_SCHEMA,
};
pub use source::{FrameAssembler, IngestFrame, IngestRecord};

use thiserror::Error;

use crate::config::EngineConfig;
use crate::frame::FrameObservation;
use crate::registration::AudienceLayout;
use crate::simulator::{
    prepare, scenario_identifier, score_run, BenchError, BenchRow, GroundTruth, Method, MethodRun, ScenarioSpec,
};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("log has no {0}")]
    Missing(&'static str),
}

/// Runs a finite frame source through a presentation from `start_t` to
/// `end_t`. With no `end_t` the stream ends one frame interval after the
/// last frame.
pub fn run_stream<'a>(
    cfg: &EngineConfig,
    layout: &AudienceLayout,
    frames: impl IntoIterator<Item = &'a FrameObservation>,
    source: &str,
    start_t: u64,
    end_t: Option<u64>,
) -> Result<SessionLog, ReplayError> {
    let mut c = SessionController::with_layout(cfg.clone(), layout.clone());
    c.advance_clock(start_t);
    let mut records = vec![c.header(source)];
    records.extend(c.control(ControlCommand::StartPresentation)?.records);
    for f in frames {
        records.extend(c.ingest(f)?.records);
    }
    records.extend(c.control_at(ControlCommand::Terminate, end_t)?.records);
    Ok(SessionLog { records })
}

/// Re-runs the presentation recorded in `log` from its own header, layout,
/// frames and phase times.
pub fn replay(log: &SessionLog) -> Result<SessionLog, ReplayError> {
    let header = log.header().ok_or(ReplayError::Missing("header"))?;
    let layout = log.layout().ok_or(ReplayError::Missing("audience layout"))?;
    let start = log
        .phase_start(Phase::Presenting)
        .ok_or(ReplayError::Missing("presentation start"))?;
    let end = log.phase_start(Phase::Terminated);
    run_stream(&header.config, layout, log.frames(Phase::Presenting), &header.source, start, end)
}

/// Outcome of comparing a log's derived records with a fresh replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayCheck {
    pub original: usize,
    pub regenerated: usize,
    /// Index among derived records of the first difference.
    pub first_mismatch: Option<usize>,
}

impl ReplayCheck {
    pub fn is_identical(&self) -> bool {
        self.first_mismatch.is_none() && self.original == self.regenerated
    }
}

pub fn verify_replay(log: &SessionLog) -> Result<ReplayCheck, ReplayError> {
    let a = log.derived_lines();
    let b = replay(log)?.derived_lines();
    Ok(ReplayCheck {
        original: a.len(),
        regenerated: b.len(),
        first_mismatch: a.iter().zip(&b).position(|(x, y)| x != y),
    })
}

/// Scores the attention records of a simulated session log against ground
/// truth. Latency is not recorded in logs and is reported as zero.
pub fn score_log(log: &SessionLog, truth: &GroundTruth, seed: u64) -> Result<BenchRow, BenchError> {
    let run = MethodRun {
        method: Method::Anchor,
        attention: log.attention().map(|a| a.attention.clone()).collect(),
        latencies_ns: vec![],
    };
    let frame_ids: std::collections::HashSet<u64> = run.attention.iter().map(|a| a.frame_id).collect();
    let truth: Vec<_> = truth.frames.iter().filter(|t| frame_ids.contains(&t.frame_id)).cloned().collect();
    score_run(&truth_name(log), seed, &run, &truth)
}

fn truth_name(log: &SessionLog) -> String {
    log.header()
        .map(|h| h.source.strip_prefix("sim:").unwrap_or(&h.source).to_string())
        .unwrap_or_default()
}

/// A complete simulated session: sweep log, registered layout, presentation
/// log and ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub sweep_log: SessionLog,
    pub layout: AudienceLayout,
    pub log: SessionLog,
    pub truth: GroundTruth,
    /// Config used for the presentation, including the scenario's identifier.
    pub config: EngineConfig,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Renders `spec`, registers the sweep through the controller, and runs the
/// presentation through the pipeline.
pub fn simulate(spec: &ScenarioSpec, cfg: &EngineConfig) -> Result<Simulation, SimulationError> {
    let p = prepare(spec, cfg)?;
    let sweep_frames = crate::simulator::generate_sweep(spec).map_err(BenchError::from)?.frames;

    let mut c = SessionController::new(cfg.clone());
    let mut sweep = vec![c.header(format!("sim:{}:sweep", spec.name))];
    sweep.extend(c.control(ControlCommand::StartRegistration)?.records);
    for f in &sweep_frames {
        sweep.extend(c.ingest(f)?.records);
    }
    sweep.extend(c.control(ControlCommand::StopRegistration)?.records);
    sweep.extend(c.control(ControlCommand::BuildAudienceMap)?.records);
    debug_assert_eq!(c.layout(), Some(&p.layout));

    let mut config = cfg.clone();
    config.identifier = scenario_identifier(spec);
    let log = run_stream(
        &config,
        &p.layout,
        &p.session.frames,
        &format!("sim:{}", spec.name),
        0,
        Some(spec.duration_ms()),
    )?;
    Ok(Simulation {
        sweep_log: SessionLog { records: sweep },
        layout: p.layout,
        log,
        truth: p.session.truth,
        config,
    })
}
