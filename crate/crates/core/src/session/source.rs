//! Frame ingestion for live sources.
//!
//! A live adapter sends newline-delimited JSON using the session-log frame
//! schema. Frames may carry their gaze sample inline; otherwise the adapter
//! sends gaze samples as separate `gaze` records and the assembler pairs each
//! frame with the nearest sample within the pairing tolerance. Unknown fields
//! (such as a logged `phase`) are ignored, so a session log can be fed back in
//! as a live source.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::frame::{FaceDetection, FrameObservation, FrameSize, GazeSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestFrame {
    pub frame_id: u64,
    pub t: u64,
    #[serde(default)]
    pub frame_size: FrameSize,
    #[serde(default)]
    pub gaze: Option<GazeSample>,
    #[serde(default)]
    pub detections: Vec<FaceDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IngestRecord {
    Frame(IngestFrame),
    Gaze(GazeSample),
}

impl IngestRecord {
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Pairs frames with separately delivered gaze samples.
///
/// A frame without inline gaze waits until a gaze sample later than
/// `frame.t + tolerance` arrives (no closer sample can follow), or until
/// [`flush`](Self::flush). Frames with no sample in range get an invalid gaze
/// sample and are classified as non-audience downstream.
#[derive(Debug, Clone)]
pub struct FrameAssembler {
    tolerance_ms: u64,
    gaze: VecDeque<GazeSample>,
    pending: VecDeque<IngestFrame>,
    latest_gaze_t: Option<u64>,
}

impl FrameAssembler {
    pub fn new(tolerance_ms: u64) -> Self {
        Self {
            tolerance_ms,
            gaze: VecDeque::new(),
            pending: VecDeque::new(),
            latest_gaze_t: None,
        }
    }

    /// Feeds one record; returns the frames that became complete, in order.
    pub fn push(&mut self, record: IngestRecord) -> Vec<FrameObservation> {
        match record {
            IngestRecord::Gaze(g) => {
                self.latest_gaze_t = Some(self.latest_gaze_t.map_or(g.t, |t| t.max(g.t)));
                self.gaze.push_back(g);
            }
            IngestRecord::Frame(f) => self.pending.push_back(f),
        }
        self.release(false)
    }

    /// Completes every pending frame with the samples seen so far.
    pub fn flush(&mut self) -> Vec<FrameObservation> {
        self.release(true)
    }

    fn release(&mut self, all: bool) -> Vec<FrameObservation> {
        let mut out = Vec::new();
        while let Some(f) = self.pending.front() {
            let ready = f.gaze.is_some()
                || all
                || self.latest_gaze_t.is_some_and(|t| t > f.t + self.tolerance_ms);
            if !ready {
                break;
            }
            let f = self.pending.pop_front().expect("front exists");
            let gaze = f.gaze.unwrap_or_else(|| self.nearest(f.t));
            out.push(FrameObservation {
                frame_id: f.frame_id,
                t: f.t,
                frame_size: f.frame_size,
                gaze,
                detections: f.detections,
            });
        }
        // samples older than any frame still to come are no longer needed
        let horizon = self.pending.front().map_or_else(
            || out.last().map_or(0, |f| f.t),
            |f| f.t,
        );
        while self.gaze.front().is_some_and(|g| g.t + self.tolerance_ms < horizon) {
            self.gaze.pop_front();
        }
        out
    }

    /// Nearest sample to `t` within tolerance; ties go to the earlier sample.
    fn nearest(&self, t: u64) -> GazeSample {
        self.gaze
            .iter()
            .filter(|g| g.t.abs_diff(t) <= self.tolerance_ms)
            .min_by_key(|g| (g.t.abs_diff(t), g.t))
            .copied()
            .unwrap_or_else(|| GazeSample::invalid(t))
    }
}
