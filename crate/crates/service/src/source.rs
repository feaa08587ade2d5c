//! Finite frame sources: recorded session logs and simulated scenarios.

use std::time::Duration;

use gazecoach_core::frame::FrameObservation;
use gazecoach_core::session::{ControlCommand, Phase, SessionLog};
use gazecoach_core::simulator::{generate_session, generate_sweep, ScenarioError, ScenarioSpec};
use tokio::time::Instant;

use crate::worker::{Request, ServiceClient, ServiceError};

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSource {
    /// Source label written to the log header.
    pub label: String,
    pub sweep: Vec<FrameObservation>,
    pub presentation: Vec<FrameObservation>,
    /// Presentation start in source time.
    pub start_t: u64,
    /// Presentation end in source time, when the source records one.
    pub end_t: Option<u64>,
}

impl RecordedSource {
    pub fn from_log(log: &SessionLog, label: String) -> Self {
        let presentation: Vec<_> = log.frames(Phase::Presenting).cloned().collect();
        let start_t = log
            .phase_start(Phase::Presenting)
            .or_else(|| presentation.first().map(|f| f.t))
            .unwrap_or(0);
        Self {
            label,
            sweep: log.frames(Phase::Registering).cloned().collect(),
            presentation,
            start_t,
            end_t: log.phase_start(Phase::Terminated),
        }
    }

    pub fn from_scenario(spec: &ScenarioSpec) -> Result<Self, ScenarioError> {
        Ok(Self {
            label: format!("sim:{}", spec.name),
            sweep: generate_sweep(spec)?.frames,
            presentation: generate_session(spec)?.frames,
            start_t: 0,
            end_t: Some(spec.duration_ms()),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FeedOptions {
    /// Start presenting immediately instead of waiting for the console.
    pub headless: bool,
    /// Pace frames by their timestamps instead of as fast as possible.
    pub realtime: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot start presenting: {0}")]
    Start(String),
}

/// Drives the worker from a recorded source. Headless runs present at once
/// and end with the source. Otherwise sweep frames are released when the
/// console starts registration and presentation frames when it starts
/// presenting, shifted so they never precede the session clock.
pub async fn feed(source: RecordedSource, client: ServiceClient, opts: FeedOptions) -> Result<(), FeedError> {
    if opts.headless {
        match client.control(ControlCommand::StartPresentation).await? {
            Ok(_) => {}
            Err(r) => return Err(FeedError::Start(r.error)),
        }
        send_frames(&client, source.presentation, 0, opts.realtime).await?;
        client.send(Request::EndOfSource { end_t: source.end_t })?;
        return Ok(());
    }

    let mut status = client.status();
    let mut sweep = Some(source.sweep);
    loop {
        let snap = status.borrow_and_update().clone();
        match snap.phase {
            Phase::Registering if snap.registration.is_some_and(|r| r.capturing) => {
                if let Some(frames) = sweep.take() {
                    let shift = frames.first().map_or(0, |f| snap.t.saturating_sub(f.t));
                    send_frames(&client, frames, shift, opts.realtime).await?;
                }
            }
            Phase::Presenting => {
                let shift = snap.t.saturating_sub(source.start_t);
                send_frames(&client, source.presentation, shift, opts.realtime).await?;
                client.send(Request::EndOfSource {
                    end_t: source.end_t.map(|t| t + shift),
                })?;
                return Ok(());
            }
            Phase::Terminated => return Ok(()),
            _ => {}
        }
        if status.changed().await.is_err() {
            return Ok(());
        }
    }
}

async fn send_frames(
    client: &ServiceClient,
    mut frames: Vec<FrameObservation>,
    shift: u64,
    realtime: bool,
) -> Result<(), ServiceError> {
    for f in &mut frames {
        f.t += shift;
        f.gaze.t += shift;
    }
    if !realtime {
        for chunk in frames.chunks(CHUNK) {
            client.send(Request::Frames(chunk.to_vec()))?;
        }
        return Ok(());
    }
    let Some(t0) = frames.first().map(|f| f.t) else {
        return Ok(());
    };
    let epoch = Instant::now();
    for f in frames {
        tokio::time::sleep_until(epoch + Duration::from_millis(f.t - t0)).await;
        client.send(Request::Frames(vec![f]))?;
    }
    Ok(())
}
