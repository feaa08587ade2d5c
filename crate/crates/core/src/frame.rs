//! Scene-frame input types: face detections, gaze samples and the paired
//! per-frame observation the engine consumes.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A point in scene-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned rectangle, `[x0, y0, x1, y1]` with `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Box of the given size centred on `c`.
    pub fn centered(c: Point, w: f64, h: f64) -> Self {
        Self::new(c.x - w / 2.0, c.y - h / 2.0, c.x + w / 2.0, c.y + h / 2.0)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn within(&self, size: FrameSize) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= size.width
            && self.y1 <= size.height
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct FrameSize {
    pub width: f64,
    pub height: f64,
}

impl FrameSize {
    pub const fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }
}

impl Default for FrameSize {
    fn default() -> Self {
        Self::new(1280.0, 720.0)
    }
}

impl From<[f64; 2]> for FrameSize {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<FrameSize> for [f64; 2] {
    fn from(s: FrameSize) -> Self {
        [s.width, s.height]
    }
}

/// Registered audience member, `S_1` (leftmost) through `S_N`.
///
/// The wrapped value is the 1-based ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemberId(u32);

impl MemberId {
    /// Panics on ordinal 0; ordinals are 1-based.
    pub fn new(ordinal: u32) -> Self {
        assert!(ordinal >= 1, "member ordinals start at 1");
        Self(ordinal)
    }

    pub fn ordinal(self) -> u32 {
        self.0
    }

    /// Zero-based position in per-member arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::new(index as u32 + 1)
    }
}

impl fmt::Display for MemberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S_{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid member id {0:?}, expected S_<ordinal>")]
pub struct ParseMemberIdError(String);

impl FromStr for MemberId {
    type Err = ParseMemberIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("S_")
            .and_then(|n| n.parse::<u32>().ok())
            .filter(|&n| n >= 1)
            .map(MemberId)
            .ok_or_else(|| ParseMemberIdError(s.to_string()))
    }
}

impl Serialize for MemberId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MemberId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One detected face in a scene frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub center: Point,
    pub confidence: f64,
    /// Appearance embedding; its length is the identifier provider's dimension.
    pub descriptor: Vec<f64>,
}

impl FaceDetection {
    /// Detection whose box is `w` x `h` around `center`.
    pub fn at(center: Point, w: f64, h: f64, confidence: f64, descriptor: Vec<f64>) -> Self {
        Self {
            bbox: BBox::centered(center, w, h),
            center,
            confidence,
            descriptor,
        }
    }
}

/// Total order used wherever detections need a canonical, input-order
/// independent arrangement: x, then y, then detector confidence, then the
/// descriptor values.
pub fn canonical_order(a: &FaceDetection, b: &FaceDetection) -> Ordering {
    a.center
        .x
        .total_cmp(&b.center.x)
        .then(a.center.y.total_cmp(&b.center.y))
        .then(a.confidence.total_cmp(&b.confidence))
        .then_with(|| {
            a.descriptor
                .iter()
                .zip(&b.descriptor)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| a.descriptor.len().cmp(&b.descriptor.len()))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: u64,
    pub point: Point,
    pub valid: bool,
}

impl GazeSample {
    pub fn valid(t: u64, point: Point) -> Self {
        Self { t, point, valid: true }
    }

    pub fn invalid(t: u64) -> Self {
        Self {
            t,
            point: Point::default(),
            valid: false,
        }
    }
}

/// One scene-camera frame with its detections and the paired gaze sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_id: u64,
    pub t: u64,
    pub frame_size: FrameSize,
    pub gaze: GazeSample,
    pub detections: Vec<FaceDetection>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame {frame_id}: detection {index} box lies outside the frame")]
    BoxOutOfFrame { frame_id: u64, index: usize },
    #[error("frame {frame_id}: detection {index} center lies outside its box")]
    CenterOutsideBox { frame_id: u64, index: usize },
    #[error("frame {frame_id}: detection {index} confidence {confidence} outside [0, 1]")]
    BadConfidence {
        frame_id: u64,
        index: usize,
        confidence: f64,
    },
    #[error("frame {frame_id}: detection {index} descriptor has length {got}, expected {expected}")]
    DescriptorDim {
        frame_id: u64,
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("frame {frame_id}: valid gaze point lies outside the frame")]
    GazeOutOfFrame { frame_id: u64 },
    #[error("frame {frame_id}: gaze sample at {gaze_t} ms is more than {tolerance} ms from frame time {t}")]
    GazeUnpaired {
        frame_id: u64,
        t: u64,
        gaze_t: u64,
        tolerance: u64,
    },
}

impl FrameObservation {
    /// Checks the structural invariants of a frame. `descriptor_dim` is the
    /// identifier provider's declared dimension; `pairing_tolerance_ms` bounds
    /// the gaze/frame timestamp difference for valid gaze samples.
    pub fn validate(&self, descriptor_dim: usize, pairing_tolerance_ms: u64) -> Result<(), FrameError> {
        let frame_id = self.frame_id;
        for (index, d) in self.detections.iter().enumerate() {
            if !d.bbox.within(self.frame_size) {
                return Err(FrameError::BoxOutOfFrame { frame_id, index });
            }
            if !d.bbox.contains(&d.center) {
                return Err(FrameError::CenterOutsideBox { frame_id, index });
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(FrameError::BadConfidence {
                    frame_id,
                    index,
                    confidence: d.confidence,
                });
            }
            if d.descriptor.len() != descriptor_dim {
                return Err(FrameError::DescriptorDim {
                    frame_id,
                    index,
                    got: d.descriptor.len(),
                    expected: descriptor_dim,
                });
            }
        }
        if self.gaze.valid {
            if !self.frame_size.contains(&self.gaze.point) {
                return Err(FrameError::GazeOutOfFrame { frame_id });
            }
            if self.gaze.t.abs_diff(self.t) > pairing_tolerance_ms {
                return Err(FrameError::GazeUnpaired {
                    frame_id,
                    t: self.t,
                    gaze_t: self.gaze.t,
                    tolerance: pairing_tolerance_ms,
                });
            }
        }
        Ok(())
    }

    /// Detection indices sorted left to right. Ties on x fall back to y, then
    /// to detection order.
    pub fn left_to_right(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.detections.len()).collect();
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (&self.detections[a].center, &self.detections[b].center);
            pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(a.cmp(&b))
        });
        idx
    }
}
