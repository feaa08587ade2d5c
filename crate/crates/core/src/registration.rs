//! Audience registration from a left-to-right sweep.
//!
//! Detections from consecutive sweep frames are associated into tracks on a
//! one-dimensional "sweep line": every frame gets an estimated camera offset
//! (accumulated from the median displacement of faces seen in the previous
//! frame), and a detection's global position is that offset plus its frame x.
//! Finalization orders the surviving tracks left to right and labels them
//! `S_1..S_N`, taking each member's template from its most confident
//! detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RegistrationConfig;
use crate::frame::{canonical_order, BBox, FaceDetection, FrameObservation, MemberId};

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("sweep frame {frame_id} at {t} ms does not follow the previous frame at {last_t} ms")]
    OutOfOrder { frame_id: u64, t: u64, last_t: u64 },
    #[error("no audience track reached {min_observations} observations")]
    EmptyAudience { min_observations: u32 },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

/// Where a template was cut from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRef {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMember {
    pub id: MemberId,
    pub ordinal: u32,
    /// Position on the sweep line, pixels.
    pub offset: f64,
    pub det_confidence: f64,
    pub descriptor: Vec<f64>,
    pub crop: CropRef,
}

/// The registered audience, ordered left to right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudienceLayout {
    n_members: usize,
    members: Vec<LayoutMember>,
}

#[derive(Deserialize)]
struct LayoutFile {
    n_members: usize,
    members: Vec<LayoutMember>,
}

impl<'de> Deserialize<'de> for AudienceLayout {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = LayoutFile::deserialize(deserializer)?;
        if file.n_members != file.members.len() {
            return Err(serde::de::Error::custom(format!(
                "n_members is {} but {} members are listed",
                file.n_members,
                file.members.len()
            )));
        }
        AudienceLayout::from_members(file.members).map_err(serde::de::Error::custom)
    }
}

impl AudienceLayout {
    /// Builds a layout from fully specified members, checking that ids are
    /// exactly `S_1..S_N` in order, offsets do not decrease and all template
    /// descriptors share one dimension.
    pub fn from_members(members: Vec<LayoutMember>) -> Result<Self, RegistrationError> {
        if members.is_empty() {
            return Err(RegistrationError::InvalidLayout("layout has no members".into()));
        }
        let dim = members[0].descriptor.len();
        for (i, m) in members.iter().enumerate() {
            let expected = MemberId::from_index(i);
            if m.id != expected || m.ordinal != expected.ordinal() {
                return Err(RegistrationError::InvalidLayout(format!(
                    "member {i} is {} with ordinal {}, expected {expected}",
                    m.id, m.ordinal
                )));
            }
            if m.descriptor.len() != dim {
                return Err(RegistrationError::InvalidLayout(format!(
                    "{} descriptor has length {}, expected {dim}",
                    m.id,
                    m.descriptor.len()
                )));
            }
        }
        if members.windows(2).any(|w| w[1].offset < w[0].offset) {
            return Err(RegistrationError::InvalidLayout("offsets decrease left to right".into()));
        }
        Ok(Self {
            n_members: members.len(),
            members,
        })
    }

    /// Layout whose templates are the given descriptors, placed at the given
    /// offsets (which must already be sorted).
    pub fn from_templates(entries: Vec<(f64, Vec<f64>)>) -> Result<Self, RegistrationError> {
        let members = entries
            .into_iter()
            .enumerate()
            .map(|(i, (offset, descriptor))| LayoutMember {
                id: MemberId::from_index(i),
                ordinal: i as u32 + 1,
                offset,
                det_confidence: 1.0,
                descriptor,
                crop: CropRef {
                    frame_id: 0,
                    bbox: BBox::default(),
                },
            })
            .collect();
        Self::from_members(members)
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn members(&self) -> &[LayoutMember] {
        &self.members
    }

    pub fn member(&self, id: MemberId) -> Option<&LayoutMember> {
        self.members.get(id.index())
    }

    pub fn contains(&self, id: MemberId) -> bool {
        id.index() < self.n_members
    }

    /// Member at a 1-based ordinal given as a signed value, if in range.
    pub fn at_ordinal(&self, ordinal: i64) -> Option<MemberId> {
        (ordinal >= 1 && ordinal <= self.n_members as i64).then(|| MemberId::new(ordinal as u32))
    }

    pub fn descriptor_dim(&self) -> usize {
        self.members[0].descriptor.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TemplateCandidate {
    detection: FaceDetection,
    frame_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrack {
    global_sum: f64,
    last_global: f64,
    last_frame_x: f64,
    last_seen: u64,
    first_seen: (u64, usize),
    observations: u32,
    best: TemplateCandidate,
}

impl SweepTrack {
    /// Mean position on the sweep line.
    pub fn offset(&self) -> f64 {
        self.global_sum / self.observations as f64
    }

    pub fn observations(&self) -> u32 {
        self.observations
    }
}

/// In-progress registration sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepState {
    cfg: RegistrationConfig,
    tracks: Vec<SweepTrack>,
    /// Estimated displacement of faces between consecutive processed frames,
    /// in frame pixels (negative while panning right).
    last_shift: f64,
    camera_offset: f64,
    last_t: Option<u64>,
    frames_seen: u64,
    processed: u64,
}

impl SweepState {
    pub fn new(cfg: RegistrationConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            last_shift: 0.0,
            camera_offset: 0.0,
            last_t: None,
            frames_seen: 0,
            processed: 0,
        }
    }

    pub fn tracks(&self) -> &[SweepTrack] {
        &self.tracks
    }

    pub fn last_shift(&self) -> f64 {
        self.last_shift
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Associates one sweep frame's detections with the existing tracks.
    pub fn ingest(&mut self, frame: &FrameObservation) -> Result<(), RegistrationError> {
        if let Some(last_t) = self.last_t {
            if frame.t <= last_t {
                return Err(RegistrationError::OutOfOrder {
                    frame_id: frame.frame_id,
                    t: frame.t,
                    last_t,
                });
            }
        }
        self.last_t = Some(frame.t);
        let seq = self.frames_seen;
        self.frames_seen += 1;
        if !seq.is_multiple_of(self.cfg.subsample as u64) || frame.detections.is_empty() {
            return Ok(());
        }

        let mut dets: Vec<&FaceDetection> = frame.detections.iter().collect();
        dets.sort_by(|a, b| canonical_order(a, b));
        let gate = self.cfg.gate.resolve(frame.frame_size.width);
        let prev = self.processed;
        self.processed += 1;

        let predicted = self.camera_offset - self.last_shift;
        let first = self.associate(&dets, predicted, gate);
        let mut displacements: Vec<f64> = first
            .iter()
            .filter(|&&(_, t)| prev > 0 && self.tracks[t].last_seen == prev - 1)
            .map(|&(d, t)| dets[d].center.x - self.tracks[t].last_frame_x)
            .collect();
        let shift = if displacements.is_empty() {
            self.last_shift
        } else {
            median(&mut displacements)
        };
        let camera = self.camera_offset - shift;
        let matches = self.associate(&dets, camera, gate);

        let mut matched = vec![false; dets.len()];
        for &(d, t) in &matches {
            matched[d] = true;
            let det = dets[d];
            let global = camera + det.center.x;
            let track = &mut self.tracks[t];
            track.global_sum += global;
            track.last_global = global;
            track.last_frame_x = det.center.x;
            track.last_seen = prev;
            track.observations += 1;
            if det.confidence > track.best.detection.confidence {
                track.best = TemplateCandidate {
                    detection: det.clone(),
                    frame_id: frame.frame_id,
                };
            }
        }
        for (d, det) in dets.iter().enumerate().filter(|&(d, _)| !matched[d]) {
            let global = camera + det.center.x;
            self.tracks.push(SweepTrack {
                global_sum: global,
                last_global: global,
                last_frame_x: det.center.x,
                last_seen: prev,
                first_seen: (prev, d),
                observations: 1,
                best: TemplateCandidate {
                    detection: (*det).clone(),
                    frame_id: frame.frame_id,
                },
            });
        }
        self.camera_offset = camera;
        self.last_shift = shift;
        Ok(())
    }

    /// Greedy one-to-one association, cheapest pairs first. Returns
    /// `(detection index, track index)` pairs.
    fn associate(&self, dets: &[&FaceDetection], camera: f64, gate: f64) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (d, det) in dets.iter().enumerate() {
            let global = camera + det.center.x;
            for (t, track) in self.tracks.iter().enumerate() {
                let dist = (global - track.last_global).abs();
                if dist < gate {
                    let sim = cosine(&det.descriptor, &track.best.detection.descriptor);
                    pairs.push((dist, sim, t, d));
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut det_used = vec![false; dets.len()];
        let mut track_used = vec![false; self.tracks.len()];
        let mut out = Vec::new();
        for (_, _, t, d) in pairs {
            if !det_used[d] && !track_used[t] {
                det_used[d] = true;
                track_used[t] = true;
                out.push((d, t));
            }
        }
        out
    }

    /// Orders surviving tracks left to right and assigns `S_1..S_N`.
    pub fn finalize(&self) -> Result<AudienceLayout, RegistrationError> {
        let min = self.cfg.min_track_observations;
        let mut survivors: Vec<&SweepTrack> =
            self.tracks.iter().filter(|t| t.observations >= min).collect();
        if survivors.is_empty() {
            return Err(RegistrationError::EmptyAudience { min_observations: min });
        }
        survivors.sort_by(|a, b| {
            a.offset()
                .total_cmp(&b.offset())
                .then(b.observations.cmp(&a.observations))
                .then(a.first_seen.cmp(&b.first_seen))
        });
        let members = survivors
            .into_iter()
            .enumerate()
            .map(|(i, t)| LayoutMember {
                id: MemberId::from_index(i),
                ordinal: i as u32 + 1,
                offset: t.offset(),
                det_confidence: t.best.detection.confidence,
                descriptor: t.best.detection.descriptor.clone(),
                crop: CropRef {
                    frame_id: t.best.frame_id,
                    bbox: t.best.detection.bbox,
                },
            })
            .collect();
        AudienceLayout::from_members(members)
    }
}

/// Runs a whole sweep and finalizes it.
pub fn register_sweep<'a>(
    frames: impl IntoIterator<Item = &'a FrameObservation>,
    cfg: &RegistrationConfig,
) -> Result<AudienceLayout, RegistrationError> {
    let mut state = SweepState::new(cfg.clone());
    for f in frames {
        state.ingest(f)?;
    }
    state.finalize()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{FrameSize, GazeSample, Point};

    fn det(x: f64, code: f64) -> FaceDetection {
        FaceDetection::at(Point::new(x, 360.0), 60.0, 80.0, 0.9, vec![code, 1.0])
    }

    fn frame(id: u64, dets: Vec<FaceDetection>) -> FrameObservation {
        FrameObservation {
            frame_id: id,
            t: id * 33,
            frame_size: FrameSize::new(1280.0, 720.0),
            gaze: GazeSample::invalid(id * 33),
            detections: dets,
        }
    }

    #[test]
    fn stationary_faces_form_one_track_each() {
        let mut s = SweepState::new(RegistrationConfig::default());
        for i in 1..=3 {
            s.ingest(&frame(i, vec![det(300.0, 0.1), det(700.0, 0.2)])).unwrap();
        }
        assert_eq!(s.tracks().len(), 2);
        assert!(s.tracks().iter().all(|t| t.observations() == 3));
    }

    #[test]
    fn pan_right_extends_the_sweep_line() {
        // Faces A, B in frame 1; B, C in frame 2 after a 100 px pan right.
        // Exhaustive check: A@300, B@600, C@900 on the sweep line.
        let mut s = SweepState::new(RegistrationConfig::default());
        s.ingest(&frame(1, vec![det(300.0, 0.1), det(600.0, 0.2)])).unwrap();
        s.ingest(&frame(2, vec![det(500.0, 0.2), det(800.0, 0.3)])).unwrap();
        let mut offsets: Vec<f64> = s.tracks().iter().map(|t| t.offset()).collect();
        assert_eq!(offsets.len(), 3);
        offsets.sort_by(f64::total_cmp);
        assert_eq!(offsets, vec![300.0, 600.0, 900.0]);
        assert_eq!(s.last_shift(), -100.0);
    }

    #[test]
    fn empty_frames_leave_state_unchanged() {
        let mut s = SweepState::new(RegistrationConfig::default());
        s.ingest(&frame(1, vec![det(300.0, 0.1)])).unwrap();
        let before = s.tracks().to_vec();
        s.ingest(&frame(2, vec![])).unwrap();
        assert_eq!(s.tracks(), &before[..]);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut s = SweepState::new(RegistrationConfig::default());
        s.ingest(&frame(2, vec![det(300.0, 0.1)])).unwrap();
        let snapshot = s.clone();
        let err = s.ingest(&frame(1, vec![det(300.0, 0.1)])).unwrap_err();
        assert!(matches!(err, RegistrationError::OutOfOrder { .. }));
        assert_eq!(s, snapshot);
    }

    #[test]
    fn finalize_sorts_by_offset() {
        let cfg = RegistrationConfig {
            min_track_observations: 1,
            ..Default::default()
        };
        let mut s = SweepState::new(cfg);
        s.ingest(&frame(1, vec![det(500.0, 0.5), det(100.0, 0.1), det(300.0, 0.3)])).unwrap();
        let layout = s.finalize().unwrap();
        let offsets: Vec<f64> = layout.members().iter().map(|m| m.offset).collect();
        assert_eq!(offsets, vec![100.0, 300.0, 500.0]);
        assert_eq!(layout.members()[1].id, MemberId::new(2));
        assert_eq!(layout.members()[1].descriptor[0], 0.3);
    }

    #[test]
    fn single_track_gives_single_member() {
        let mut s = SweepState::new(RegistrationConfig::default());
        s.ingest(&frame(1, vec![det(640.0, 0.1)])).unwrap();
        s.ingest(&frame(2, vec![det(640.0, 0.1)])).unwrap();
        let layout = s.finalize().unwrap();
        assert_eq!(layout.n_members(), 1);
        assert_eq!(layout.members()[0].id, MemberId::new(1));
    }

    #[test]
    fn one_frame_false_positive_is_dropped() {
        let mut s = SweepState::new(RegistrationConfig::default());
        s.ingest(&frame(1, vec![det(300.0, 0.1), det(900.0, 0.9)])).unwrap();
        s.ingest(&frame(2, vec![det(300.0, 0.1)])).unwrap();
        assert_eq!(s.finalize().unwrap().n_members(), 1);
    }

    #[test]
    fn empty_sweep_is_an_error() {
        let s = SweepState::new(RegistrationConfig::default());
        assert_eq!(
            s.finalize().unwrap_err(),
            RegistrationError::EmptyAudience { min_observations: 2 }
        );
    }

    #[test]
    fn template_comes_from_most_confident_frame() {
        let mut s = SweepState::new(RegistrationConfig::default());
        let mut a = det(300.0, 0.1);
        a.confidence = 0.5;
        let mut b = det(301.0, 0.2);
        b.confidence = 0.95;
        let mut c = det(302.0, 0.3);
        c.confidence = 0.95;
        s.ingest(&frame(1, vec![a])).unwrap();
        s.ingest(&frame(2, vec![b])).unwrap();
        s.ingest(&frame(3, vec![c])).unwrap();
        let layout = s.finalize().unwrap();
        assert_eq!(layout.members()[0].crop.frame_id, 2);
        assert_eq!(layout.members()[0].descriptor[0], 0.2);
    }

    #[test]
    fn layout_file_round_trip_and_validation() {
        let layout =
            AudienceLayout::from_templates(vec![(1.0, vec![1.0, 0.0]), (2.0, vec![0.0, 1.0])]).unwrap();
        let json = serde_json::to_string(&layout).unwrap();
        assert!(json.contains("\"n_members\":2"));
        let back: AudienceLayout = serde_json::from_str(&json).unwrap();
        assert_eq!(back, layout);
        let bad = json.replace("\"n_members\":2", "\"n_members\":3");
        assert!(serde_json::from_str::<AudienceLayout>(&bad).is_err());
        assert!(AudienceLayout::from_templates(vec![(2.0, vec![1.0]), (1.0, vec![1.0])]).is_err());
    }
}
