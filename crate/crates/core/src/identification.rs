//! Per-frame audience identification.
//!
//! The anchor method keeps one trusted face, the anchor, across frames. The
//! anchor is tracked by position alone while it stays within the tracking
//! gate; only when it is lost does the (expensive) identifier run, and a new
//! anchor is accepted only above the confidence threshold. Every other face,
//! including the one under the gaze point, is then named by its left-to-right
//! offset from the anchor inside the frame, mapped through the registered
//! layout.
//!
//! The baseline identifier instead runs the identifier on every detection of
//! every frame and is kept for benchmarking.

use serde::{Deserialize, Serialize};

use crate::config::IdentificationParams;
use crate::frame::{FaceDetection, FrameObservation, MemberId, Point};
use crate::registration::{cosine, AudienceLayout};

/// Result of one identifier call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identification {
    pub member: MemberId,
    /// In `[0, 1]`.
    pub confidence: f64,
}

/// Maps a face descriptor to the best-matching registered member.
///
/// Implementations must be deterministic for identical inputs.
pub trait IdentifierProvider: Send + Sync {
    fn descriptor_dim(&self) -> usize;

    fn identify(&self, detection: &FaceDetection, layout: &AudienceLayout) -> Identification;
}

/// Cosine similarity against the layout templates, clamped to `[0, 1]`.
/// Ties go to the lowest ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineIdentifier {
    dim: usize,
}

impl CosineIdentifier {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn for_layout(layout: &AudienceLayout) -> Self {
        Self::new(layout.descriptor_dim())
    }
}

/// Per-member clamped cosine scores for one descriptor.
pub fn template_scores<'a>(
    descriptor: &'a [f64],
    layout: &'a AudienceLayout,
) -> impl Iterator<Item = (MemberId, f64)> + 'a {
    layout
        .members()
        .iter()
        .map(move |m| (m.id, cosine(descriptor, &m.descriptor).clamp(0.0, 1.0)))
}

pub(crate) fn best_of(scores: impl Iterator<Item = (MemberId, f64)>) -> Identification {
    let mut best: Option<Identification> = None;
    for (member, confidence) in scores {
        if best.is_none_or(|b| confidence > b.confidence) {
            best = Some(Identification { member, confidence });
        }
    }
    best.expect("layouts have at least one member")
}

impl IdentifierProvider for CosineIdentifier {
    fn descriptor_dim(&self) -> usize {
        self.dim
    }

    fn identify(&self, detection: &FaceDetection, layout: &AudienceLayout) -> Identification {
        best_of(template_scores(&detection.descriptor, layout))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnchorState {
    #[default]
    Absent,
    Established {
        member: MemberId,
        center: Point,
        frame_id: u64,
    },
}

impl AnchorState {
    pub fn member(&self) -> Option<MemberId> {
        match self {
            AnchorState::Established { member, .. } => Some(*member),
            AnchorState::Absent => None,
        }
    }

    pub fn is_established(&self) -> bool {
        matches!(self, AnchorState::Established { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    /// No face within the target radius of the gaze point.
    NonAudience,
    AudienceIdentified { member: MemberId },
    /// Looking at a face whose identity could not be established.
    AudienceUnidentified,
}

impl Classification {
    pub fn is_audience(&self) -> bool {
        !matches!(self, Classification::NonAudience)
    }
}

/// Per-frame identification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAttention {
    pub frame_id: u64,
    pub classification: Classification,
    pub identifier_invoked: bool,
    pub anchor_after: AnchorState,
    /// Identity assigned to each detection, in the frame's detection order.
    pub assignments: Vec<Option<MemberId>>,
}

/// Index of the detection nearest the gaze point, if closer than `radius`.
/// Equal distances go to the leftmost face.
pub fn select_target(frame: &FrameObservation, radius: f64) -> Option<usize> {
    if !frame.gaze.valid {
        return None;
    }
    nearest(frame, &frame.gaze.point).filter(|&(_, d)| d < radius).map(|(i, _)| i)
}

/// Nearest detection to `p`, scanning left to right so that ties resolve to
/// the leftmost face.
fn nearest(frame: &FrameObservation, p: &Point) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in frame.left_to_right() {
        let d = frame.detections[i].center.distance(p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorUpdate {
    pub state: AnchorState,
    /// The anchor's detection in this frame.
    pub detection: Option<usize>,
    pub identifier_invoked: bool,
}

/// Tracks the previous anchor by position, re-selecting with the identifier
/// when tracking fails. Re-selection happens in the same frame.
pub fn maintain_anchor(
    prev: &AnchorState,
    frame: &FrameObservation,
    layout: &AudienceLayout,
    ident: &dyn IdentifierProvider,
    min_confidence: f64,
    track_gate_px: f64,
) -> AnchorUpdate {
    if frame.detections.is_empty() {
        return AnchorUpdate {
            state: AnchorState::Absent,
            detection: None,
            identifier_invoked: false,
        };
    }
    if let AnchorState::Established { member, center, .. } = prev {
        if let Some((i, d)) = nearest(frame, center) {
            if d < track_gate_px {
                return AnchorUpdate {
                    state: AnchorState::Established {
                        member: *member,
                        center: frame.detections[i].center,
                        frame_id: frame.frame_id,
                    },
                    detection: Some(i),
                    identifier_invoked: false,
                };
            }
        }
    }

    let mut best: Option<(usize, Identification)> = None;
    for i in frame.left_to_right() {
        let id = ident.identify(&frame.detections[i], layout);
        if best.is_none_or(|(_, b)| id.confidence > b.confidence) {
            best = Some((i, id));
        }
    }
    let (i, id) = best.expect("frame has detections");
    let state = if id.confidence >= min_confidence {
        AnchorState::Established {
            member: id.member,
            center: frame.detections[i].center,
            frame_id: frame.frame_id,
        }
    } else {
        AnchorState::Absent
    };
    AnchorUpdate {
        detection: state.is_established().then_some(i),
        state,
        identifier_invoked: true,
    }
}

/// Within-frame left-to-right rank of every detection.
fn ranks(frame: &FrameObservation) -> Vec<i64> {
    let mut rank = vec![0; frame.detections.len()];
    for (r, i) in frame.left_to_right().into_iter().enumerate() {
        rank[i] = r as i64;
    }
    rank
}

fn infer_with_ranks(
    rank: &[i64],
    target: usize,
    anchor_detection: usize,
    anchor_member: MemberId,
    layout: &AudienceLayout,
) -> Option<MemberId> {
    let offset = rank[target] - rank[anchor_detection];
    layout.at_ordinal(anchor_member.ordinal() as i64 + offset)
}

/// Names detection `target` by its ordinal offset from the anchor in the same
/// frame. `None` if the anchor is absent or the inferred ordinal falls outside
/// the layout.
pub fn infer_identity(
    target: usize,
    anchor: &AnchorState,
    frame: &FrameObservation,
    layout: &AudienceLayout,
) -> Option<MemberId> {
    let AnchorState::Established { member, center, .. } = anchor else {
        return None;
    };
    let (anchor_detection, _) = nearest(frame, center)?;
    infer_with_ranks(&ranks(frame), target, anchor_detection, *member, layout)
}

/// Target selection, anchor maintenance and identity inference for one frame.
pub fn identify_frame(
    prev: &AnchorState,
    frame: &FrameObservation,
    layout: &AudienceLayout,
    ident: &dyn IdentifierProvider,
    params: &IdentificationParams,
) -> FrameAttention {
    let target = select_target(frame, params.target_radius_px);
    let update = maintain_anchor(
        prev,
        frame,
        layout,
        ident,
        params.anchor_confidence,
        params.track_gate_px,
    );
    let assignments = match (&update.state, update.detection) {
        (AnchorState::Established { member, .. }, Some(a)) => {
            let rank = ranks(frame);
            (0..frame.detections.len())
                .map(|i| infer_with_ranks(&rank, i, a, *member, layout))
                .collect()
        }
        _ => vec![None; frame.detections.len()],
    };
    let classification = match target {
        None => Classification::NonAudience,
        Some(t) => match assignments[t] {
            Some(member) => Classification::AudienceIdentified { member },
            None => Classification::AudienceUnidentified,
        },
    };
    FrameAttention {
        frame_id: frame.frame_id,
        classification,
        identifier_invoked: update.identifier_invoked,
        anchor_after: update.state,
        assignments,
    }
}

/// Runs the identifier on every detection and keeps matches strictly above
/// `threshold`.
pub fn baseline_identify(
    frame: &FrameObservation,
    layout: &AudienceLayout,
    ident: &dyn IdentifierProvider,
    threshold: f64,
) -> Vec<Option<MemberId>> {
    frame
        .detections
        .iter()
        .map(|d| {
            let id = ident.identify(d, layout);
            (id.confidence > threshold).then_some(id.member)
        })
        .collect()
}

/// A per-frame identification method driven in frame order.
pub trait FrameIdentifier {
    fn process(&mut self, frame: &FrameObservation) -> FrameAttention;

    fn anchor(&self) -> &AnchorState;
}

/// Stateful driver of the anchor method.
pub struct AnchorIdentifier<'a> {
    layout: &'a AudienceLayout,
    ident: &'a dyn IdentifierProvider,
    cfg: crate::config::IdentificationConfig,
    anchor: AnchorState,
}

impl<'a> AnchorIdentifier<'a> {
    pub fn new(
        layout: &'a AudienceLayout,
        ident: &'a dyn IdentifierProvider,
        cfg: crate::config::IdentificationConfig,
    ) -> Self {
        Self {
            layout,
            ident,
            cfg,
            anchor: AnchorState::Absent,
        }
    }
}

impl FrameIdentifier for AnchorIdentifier<'_> {
    fn process(&mut self, frame: &FrameObservation) -> FrameAttention {
        let params = self.cfg.resolve(frame.frame_size.width);
        let fa = identify_frame(&self.anchor, frame, self.layout, self.ident, &params);
        self.anchor = fa.anchor_after.clone();
        fa
    }

    fn anchor(&self) -> &AnchorState {
        &self.anchor
    }
}

/// Baseline driver. It runs its identification pass on every frame, so
/// `identifier_invoked` is always set.
pub struct BaselineIdentifier<'a> {
    layout: &'a AudienceLayout,
    ident: &'a dyn IdentifierProvider,
    cfg: crate::config::IdentificationConfig,
}

impl<'a> BaselineIdentifier<'a> {
    pub fn new(
        layout: &'a AudienceLayout,
        ident: &'a dyn IdentifierProvider,
        cfg: crate::config::IdentificationConfig,
    ) -> Self {
        Self { layout, ident, cfg }
    }
}

impl FrameIdentifier for BaselineIdentifier<'_> {
    fn process(&mut self, frame: &FrameObservation) -> FrameAttention {
        let params = self.cfg.resolve(frame.frame_size.width);
        let assignments =
            baseline_identify(frame, self.layout, self.ident, params.baseline_sim_threshold);
        let classification = match select_target(frame, params.target_radius_px) {
            None => Classification::NonAudience,
            Some(t) => match assignments[t] {
                Some(member) => Classification::AudienceIdentified { member },
                None => Classification::AudienceUnidentified,
            },
        };
        FrameAttention {
            frame_id: frame.frame_id,
            classification,
            identifier_invoked: true,
            anchor_after: AnchorState::Absent,
            assignments,
        }
    }

    fn anchor(&self) -> &AnchorState {
        &AnchorState::Absent
    }
}
