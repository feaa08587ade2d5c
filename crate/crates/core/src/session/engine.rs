//! The presentation-stage pipeline for one session: gap detection, per-frame
//! identification, windowed metrics and advice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::control::{Phase, SessionPhase};
use super::log::{AdviceRecord, AttentionRecord, DroppedRecord, FrameRecord, LogRecord, MetricsRecord};
use crate::advisor::{AdviceEvent, Advisor, AdvisorOutput};
use crate::config::{EngineConfig, IdentificationParams};
use crate::frame::{FrameError, FrameObservation};
use crate::identification::{identify_frame, AnchorState, IdentifierProvider};
use crate::metrics::{GazeDistribution, MetricsError};
use crate::registration::{AudienceLayout, RegistrationError};
use crate::simulator::build_identifier;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    InvalidFrame(#[from] FrameError),
    #[error("frame {frame_id} at {t} ms arrived after frame {last_id} at {last_t} ms")]
    OutOfOrder {
        frame_id: u64,
        t: u64,
        last_id: u64,
        last_t: u64,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("identifier dimension {identifier} does not match layout descriptors of length {layout}")]
    DescriptorMismatch { identifier: usize, layout: usize },
}

/// Running totals since the presentation started.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounters {
    pub frames: u64,
    pub dropped: u64,
    pub audience_frames: u64,
    pub identifier_calls: u64,
    pub advice_events: u64,
}

/// Live view of the open windows, pushed to the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub t: u64,
    pub phase: Phase,
    pub muted: bool,
    /// EP over the open insufficient-rule window prefix.
    pub ep: Option<f64>,
    /// ED per member over the open imbalance-rule window prefix.
    pub ed: Option<Vec<f64>>,
    pub gde: Option<f64>,
    /// Metrics cover an open window and will change.
    pub provisional: bool,
    pub anchor: AnchorState,
    pub latest_advice: Option<AdviceEvent>,
    pub counters: SessionCounters,
    /// Registration progress while registering: frames seen, tracks open.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationProgress {
    pub frames: u64,
    pub tracks: u64,
    pub capturing: bool,
}

impl SessionSnapshot {
    /// Snapshot outside the presentation stage.
    pub fn idle(t: u64, state: SessionPhase) -> Self {
        Self {
            t,
            phase: state.phase,
            muted: state.muted,
            ep: None,
            ed: None,
            gde: None,
            provisional: false,
            anchor: AnchorState::Absent,
            latest_advice: None,
            counters: SessionCounters::default(),
            registration: None,
        }
    }
}

/// Output of one engine step, in log order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Step {
    pub records: Vec<LogRecord>,
    pub advice: Vec<AdviceEvent>,
}

impl Step {
    fn extend(&mut self, other: Step) {
        self.records.extend(other.records);
        self.advice.extend(other.advice);
    }
}

/// Presentation-stage state. Owned by exactly one worker; frames must arrive
/// in order.
pub struct Session {
    layout: AudienceLayout,
    ident: Box<dyn IdentifierProvider>,
    pairing_tolerance_ms: u64,
    params: Option<(f64, IdentificationParams)>,
    cfg: EngineConfig,
    anchor: AnchorState,
    advisor: Advisor,
    last: Option<(u64, u64)>,
    clock: u64,
    counters: SessionCounters,
    latest_advice: Option<AdviceEvent>,
}

impl Session {
    /// Starts a presentation at session time `start_t`; both advice windows
    /// open there.
    pub fn new(cfg: EngineConfig, layout: AudienceLayout, start_t: u64) -> Result<Self, SessionError> {
        let ident = build_identifier(&cfg.identifier, layout.descriptor_dim());
        Self::with_identifier(cfg, layout, ident, start_t)
    }

    pub fn with_identifier(
        cfg: EngineConfig,
        layout: AudienceLayout,
        ident: Box<dyn IdentifierProvider>,
        start_t: u64,
    ) -> Result<Self, SessionError> {
        if ident.descriptor_dim() != layout.descriptor_dim() {
            return Err(SessionError::DescriptorMismatch {
                identifier: ident.descriptor_dim(),
                layout: layout.descriptor_dim(),
            });
        }
        let mut advisor = Advisor::new(cfg.advisor.clone(), layout.n_members());
        advisor.start(start_t);
        Ok(Self {
            pairing_tolerance_ms: cfg.session.pairing_tolerance_ms(),
            layout,
            ident,
            params: None,
            cfg,
            anchor: AnchorState::Absent,
            advisor,
            last: None,
            clock: start_t,
            counters: SessionCounters::default(),
            latest_advice: None,
        })
    }

    pub fn layout(&self) -> &AudienceLayout {
        &self.layout
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    pub fn anchor(&self) -> &AnchorState {
        &self.anchor
    }

    /// Time the source would deliver its next frame, used as the end of the
    /// stream when the source gives none.
    pub fn next_frame_time(&self) -> u64 {
        match self.last {
            Some((_, t)) => t + self.cfg.session.frame_interval_ms().round() as u64,
            None => self.clock,
        }
    }

    fn params(&mut self, width: f64) -> IdentificationParams {
        match self.params {
            Some((w, p)) if w == width => p,
            _ => {
                let p = self.cfg.identification.resolve(width);
                self.params = Some((width, p));
                p
            }
        }
    }

    /// Advances the advisor to `clock`, turning closed windows and advice into
    /// records.
    fn tick(&mut self, clock: u64, phase: Phase) -> Step {
        let mut step = Step::default();
        for out in self.advisor.tick(clock) {
            match out {
                AdvisorOutput::WindowClosed { rule, t, window } => {
                    step.records.push(LogRecord::Metrics(MetricsRecord::closed(t, phase, rule, window)));
                }
                AdvisorOutput::Advice(event) => {
                    self.counters.advice_events += 1;
                    self.latest_advice = Some(event.clone());
                    step.records.push(LogRecord::Advice(AdviceRecord {
                        phase,
                        event: event.clone(),
                    }));
                    step.advice.push(event);
                }
            }
        }
        step
    }

    /// Processes one frame: dropped-frame records for any gap in frame ids,
    /// window closings up to the frame time, then the frame and its attention
    /// record.
    pub fn process_frame(&mut self, frame: &FrameObservation) -> Result<Step, SessionError> {
        let phase = Phase::Presenting;
        if let Some((last_id, last_t)) = self.last {
            if frame.frame_id <= last_id || frame.t < last_t {
                return Err(SessionError::OutOfOrder {
                    frame_id: frame.frame_id,
                    t: frame.t,
                    last_id,
                    last_t,
                });
            }
        } else if frame.t < self.clock {
            return Err(SessionError::OutOfOrder {
                frame_id: frame.frame_id,
                t: frame.t,
                last_id: frame.frame_id,
                last_t: self.clock,
            });
        }
        frame.validate(self.layout.descriptor_dim(), self.pairing_tolerance_ms)?;

        let mut step = Step::default();
        if let Some((last_id, last_t)) = self.last {
            let span = frame.frame_id - last_id;
            for id in last_id + 1..frame.frame_id {
                let t = last_t + (frame.t - last_t) * (id - last_id) / span;
                step.extend(self.tick(t, phase));
                self.advisor.observe_dropped(t)?;
                self.counters.dropped += 1;
                step.records.push(LogRecord::Dropped(DroppedRecord {
                    t,
                    phase,
                    frame_id: id,
                }));
            }
        }
        step.extend(self.tick(frame.t, phase));

        let params = self.params(frame.frame_size.width);
        let fa = identify_frame(&self.anchor, frame, &self.layout, self.ident.as_ref(), &params);
        self.advisor.observe(frame.t, fa.classification)?;
        self.anchor = fa.anchor_after.clone();
        self.counters.frames += 1;
        self.counters.identifier_calls += u64::from(fa.identifier_invoked);
        self.counters.audience_frames += u64::from(fa.classification.is_audience());
        self.last = Some((frame.frame_id, frame.t));
        self.clock = frame.t;

        step.records.push(LogRecord::Frame(FrameRecord {
            phase,
            frame: frame.clone(),
        }));
        step.records.push(LogRecord::Attention(AttentionRecord {
            t: frame.t,
            phase,
            attention: fa,
        }));
        Ok(step)
    }

    /// Ends the stream at `end_t`, closing every window that ends by then.
    pub fn finish(&mut self, end_t: u64) -> Step {
        let end_t = end_t.max(self.clock);
        self.clock = end_t;
        self.tick(end_t, Phase::Presenting)
    }

    pub fn snapshot(&self, state: SessionPhase) -> SessionSnapshot {
        let (ins, imb) = self.advisor.open_windows().expect("advisor starts with the session");
        SessionSnapshot {
            t: self.clock,
            phase: state.phase,
            muted: state.muted,
            ep: ins.eye_contact_proportion().ok(),
            ed: imb.distribution().ok(),
            gde: imb.entropy().ok(),
            provisional: true,
            anchor: self.anchor.clone(),
            latest_advice: self.latest_advice.clone(),
            counters: self.counters,
            registration: None,
        }
    }

    /// Open windows, for inspection.
    pub fn open_windows(&self) -> (&GazeDistribution, &GazeDistribution) {
        self.advisor.open_windows().expect("advisor starts with the session")
    }

    /// Id and time of the last processed frame.
    pub fn last_frame(&self) -> Option<(u64, u64)> {
        self.last
    }
}
