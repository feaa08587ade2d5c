//! Scenario descriptions: audience seating, camera motion, gaze script and
//! noise model. Scenarios are plain TOML files; the four reference scenarios
//! are also built in.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::frame::{FrameSize, MemberId};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("gaze script references {0}, which is not seated")]
    UnknownMember(MemberId),
    #[error("gaze script references unknown region {0:?}")]
    UnknownRegion(String),
}

pub const REFERENCE_SCENARIOS: [&str; 4] = ["static", "slow-pan", "fast-pan-with-blur", "occlusion-heavy"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seat {
    /// World x on the sweep line, pixels at the camera's scale.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanSegment {
    pub duration_s: f64,
    pub rate_deg_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPath {
    /// Yaw at t = 0; 0 centres the frame on world x = 0.
    #[serde(default)]
    pub start_deg: f64,
    /// Piecewise-constant yaw rate; the camera holds still after the last
    /// segment.
    #[serde(default)]
    pub segments: Vec<PanSegment>,
    /// Standard deviation of per-frame positional jitter, clipped at 3σ.
    #[serde(default)]
    pub jitter_px: f64,
}

impl CameraPath {
    pub fn still() -> Self {
        Self {
            start_deg: 0.0,
            segments: Vec::new(),
            jitter_px: 0.0,
        }
    }

    /// Yaw in degrees at time `t_s`.
    pub fn yaw_deg(&self, t_s: f64) -> f64 {
        let mut yaw = self.start_deg;
        let mut t0 = 0.0;
        for seg in &self.segments {
            if t_s <= t0 {
                break;
            }
            let dt = (t_s - t0).min(seg.duration_s);
            yaw += seg.rate_deg_s * dt;
            t0 += seg.duration_s;
        }
        yaw
    }
}

/// What the speaker is scripted to look at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GazeTarget {
    Member(MemberId),
    Region(String),
}

impl FromStr for GazeTarget {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<MemberId>() {
            Ok(m) => GazeTarget::Member(m),
            Err(_) => GazeTarget::Region(s.to_string()),
        })
    }
}

impl fmt::Display for GazeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GazeTarget::Member(m) => write!(f, "{m}"),
            GazeTarget::Region(r) => f.write_str(r),
        }
    }
}

impl Serialize for GazeTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GazeTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub target: GazeTarget,
}

/// A named non-audience area, in fractions of the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub x_frac: f64,
    pub y_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    /// The face is not detected at all.
    Drop,
    /// The face is detected with a degraded appearance and lower detector
    /// confidence.
    Degrade,
}

/// Blur over the inclusive frame range `[start_frame, end_frame]`, applied to
/// every face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurEpisode {
    pub start_frame: u64,
    pub end_frame: u64,
    pub extra_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEpisode {
    pub member: MemberId,
    pub start_frame: u64,
    pub end_frame: u64,
    pub mode: OcclusionMode,
    #[serde(default = "default_occlusion_deg")]
    pub extra_deg: f64,
}

fn default_occlusion_deg() -> f64 {
    60.0
}

/// Appearance and gaze noise.
///
/// A rendered descriptor sits at angle θ from its member's base vector, with
/// θ = `pose_base_deg` + |N(0, `pose_sigma_deg`)| plus any blur or occlusion
/// extra. The cosine identifier therefore scores the true member at cos θ.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub pose_base_deg: f64,
    pub pose_sigma_deg: f64,
    /// Isotropic gaze jitter σ, clipped at 3σ.
    pub gaze_jitter_px: f64,
    pub gaze_dropout: f64,
    /// Probability of one false-positive face per frame.
    pub spurious_rate: f64,
    /// Amplitude of the synthetic identifier's per-score jitter.
    pub identifier_jitter: f64,
    pub blur: Vec<BlurEpisode>,
    pub occlusions: Vec<OcclusionEpisode>,
}

impl NoiseModel {
    pub fn is_noise_free(&self) -> bool {
        *self == NoiseModel::default()
    }
}

/// Pre-presentation sweep: the camera pans linearly from `start_px` to
/// `end_px` (world x at frame centre) over `duration_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub duration_s: f64,
    pub start_px: f64,
    pub end_px: f64,
    #[serde(default)]
    pub pose_sigma_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub frame_size: FrameSize,
    #[serde(default = "default_px_per_degree")]
    pub px_per_degree: f64,
    #[serde(default = "default_descriptor_dim")]
    pub descriptor_dim: usize,
    #[serde(default = "default_face_size")]
    pub face_size: [f64; 2],
    /// Left to right.
    pub seats: Vec<Seat>,
    pub camera: CameraPath,
    #[serde(default = "default_regions")]
    pub regions: Vec<Region>,
    pub gaze: Vec<GazeSegment>,
    #[serde(default)]
    pub noise: NoiseModel,
    pub sweep: Option<SweepSpec>,
}

fn default_px_per_degree() -> f64 {
    16.0
}

fn default_descriptor_dim() -> usize {
    128
}

fn default_face_size() -> [f64; 2] {
    [60.0, 80.0]
}

fn default_regions() -> Vec<Region> {
    vec![
        Region {
            name: "slides".into(),
            x_frac: 0.5,
            y_frac: 0.1,
        },
        Region {
            name: "notes".into(),
            x_frac: 0.35,
            y_frac: 0.92,
        },
    ]
}

impl ScenarioSpec {
    pub fn n_members(&self) -> usize {
        self.seats.len()
    }

    pub fn n_frames(&self) -> u64 {
        (self.duration_s * self.frame_rate_hz).round() as u64
    }

    pub fn frame_time_s(&self, index: u64) -> f64 {
        index as f64 / self.frame_rate_hz
    }

    pub fn duration_ms(&self) -> u64 {
        (self.duration_s * 1000.0).round() as u64
    }

    /// The sweep to use for registration; a left-to-right pan across every
    /// seat when none is configured.
    pub fn sweep_or_default(&self) -> SweepSpec {
        self.sweep.clone().unwrap_or_else(|| {
            let first = self.seats.first().map_or(0.0, |s| s.x);
            let last = self.seats.last().map_or(0.0, |s| s.x);
            SweepSpec {
                duration_s: 8.0,
                start_px: first,
                end_px: last,
                pose_sigma_deg: 0.0,
            }
        })
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s > 0.0) {
            return invalid(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.frame_rate_hz > 0.0) {
            return invalid("frame_rate_hz must be positive".into());
        }
        if self.seats.is_empty() {
            return invalid("at least one seat is required".into());
        }
        if self.seats.windows(2).any(|w| w[1].x <= w[0].x) {
            return invalid("seats must be listed left to right with distinct x".into());
        }
        if self.descriptor_dim < 2 {
            return invalid("descriptor_dim must be at least 2".into());
        }
        if !(self.px_per_degree > 0.0) {
            return invalid("px_per_degree must be positive".into());
        }
        for p in [self.noise.gaze_dropout, self.noise.spurious_rate] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("probabilities must lie in [0, 1], got {p}"));
            }
        }
        let Some(first) = self.gaze.first() else {
            return invalid("gaze script is empty".into());
        };
        if first.start_s != 0.0 {
            return invalid("gaze script must start at 0 s".into());
        }
        for w in self.gaze.windows(2) {
            if (w[1].start_s - w[0].end_s).abs() > 1e-9 {
                return invalid(format!("gaze script has a gap or overlap at {} s", w[0].end_s));
            }
        }
        for seg in &self.gaze {
            if seg.end_s <= seg.start_s {
                return invalid(format!("empty gaze segment at {} s", seg.start_s));
            }
            match &seg.target {
                GazeTarget::Member(m) if m.index() >= self.n_members() => {
                    return Err(ScenarioError::UnknownMember(*m))
                }
                GazeTarget::Region(r) if self.region(r).is_none() => {
                    return Err(ScenarioError::UnknownRegion(r.clone()))
                }
                _ => {}
            }
        }
        if self.gaze.last().expect("non-empty").end_s < self.duration_s - 1e-9 {
            return invalid("gaze script ends before the session does".into());
        }
        for occ in &self.noise.occlusions {
            if occ.member.index() >= self.n_members() {
                return Err(ScenarioError::UnknownMember(occ.member));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs serialize")
    }

    /// A built-in reference scenario by name, or a scenario file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match Self::reference(name_or_path) {
            Some(spec) => Ok(spec),
            None => Self::load(name_or_path),
        }
    }

    /// One of [`REFERENCE_SCENARIOS`]: six members, 60 s at 30 Hz.
    pub fn reference(name: &str) -> Option<Self> {
        let spec = match name {
            "static" => reference_static(),
            "slow-pan" => reference_slow_pan(),
            "fast-pan-with-blur" => reference_fast_pan(),
            "occlusion-heavy" => reference_occlusion_heavy(),
            _ => return None,
        };
        debug_assert!(spec.validate().is_ok(), "{name}");
        Some(spec)
    }
}

const SEAT_Y: [f64; 6] = [330.0, 322.0, 336.0, 326.0, 334.0, 328.0];

fn row(spacing: f64) -> Vec<Seat> {
    (0..6)
        .map(|i| Seat {
            x: (i as f64 - 2.5) * spacing,
            y: SEAT_Y[i],
        })
        .collect()
}

fn base_spec(name: &str, seed: u64, seats: Vec<Seat>, camera: CameraPath) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        seed,
        frame_rate_hz: 30.0,
        duration_s: 60.0,
        frame_size: FrameSize::new(1280.0, 720.0),
        px_per_degree: default_px_per_degree(),
        descriptor_dim: default_descriptor_dim(),
        face_size: default_face_size(),
        seats,
        camera,
        regions: default_regions(),
        gaze: Vec::new(),
        noise: NoiseModel::default(),
        sweep: None,
    }
}

/// Scripted gaze alternating between members in view and the non-audience
/// regions, in segments of 1 to 3 s.
pub fn scripted_gaze(spec: &ScenarioSpec, audience_share: f64, seed: u64) -> Vec<GazeSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    // segments span whole frames
    let fps = spec.frame_rate_hz;
    let mut start = 0.0;
    while start < spec.duration_s {
        let frames = rng.random_range((fps as u64)..=(3 * fps as u64)) as f64;
        let end = (start + frames / fps).min(spec.duration_s);
        let mid = (start + end) / 2.0;
        let pan = spec.camera.yaw_deg(mid) * spec.px_per_degree;
        let w = spec.frame_size.width;
        let in_view: Vec<usize> = spec
            .seats
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                let x = s.x - pan + w / 2.0;
                x > 0.1 * w && x < 0.9 * w
            })
            .map(|(i, _)| i)
            .collect();
        let target = if !in_view.is_empty() && rng.random_bool(audience_share) {
            GazeTarget::Member(MemberId::from_index(in_view[rng.random_range(0..in_view.len())]))
        } else {
            let r = &spec.regions[rng.random_range(0..spec.regions.len())];
            GazeTarget::Region(r.name.clone())
        };
        out.push(GazeSegment {
            start_s: start,
            end_s: end,
            target,
        });
        start = end;
    }
    out
}

fn reference_static() -> ScenarioSpec {
    let mut spec = base_spec(
        "static",
        11,
        row(200.0),
        CameraPath {
            jitter_px: 1.0,
            ..CameraPath::still()
        },
    );
    spec.gaze = scripted_gaze(&spec, 0.75, 1011);
    spec
}

fn reference_slow_pan() -> ScenarioSpec {
    // ±300 px at 10 °/s (160 px/s), so edge members leave and re-enter view
    let half = 300.0 / 16.0;
    let leg = 2.0 * half / 10.0;
    let segments = (0..20)
        .map(|i| PanSegment {
            duration_s: leg,
            rate_deg_s: if i % 2 == 0 { 10.0 } else { -10.0 },
        })
        .collect();
    let mut spec = base_spec(
        "slow-pan",
        12,
        row(240.0),
        CameraPath {
            start_deg: -half,
            segments,
            jitter_px: 1.0,
        },
    );
    spec.gaze = scripted_gaze(&spec, 0.75, 1012);
    spec
}

fn reference_fast_pan() -> ScenarioSpec {
    // Rapid head turns of 1.5 seat spacings (360 px) inside one frame
    // interval, each followed by 8 blurred frames, separated by 3.5 s dwells.
    let fps = 30.0;
    let jump_deg = 360.0 / 16.0;
    let dwell_frames = 105u64;
    let blur_frames = 8u64;
    let mut segments = Vec::new();
    let mut blur = Vec::new();
    let mut frame = 0u64;
    let mut sign = 1.0;
    while frame + dwell_frames + 1 < 1800 {
        segments.push(PanSegment {
            duration_s: dwell_frames as f64 / fps,
            rate_deg_s: 0.0,
        });
        segments.push(PanSegment {
            duration_s: 1.0 / fps,
            rate_deg_s: sign * jump_deg * fps,
        });
        frame += dwell_frames + 1;
        blur.push(BlurEpisode {
            start_frame: frame,
            end_frame: frame + blur_frames - 1,
            extra_deg: 55.0,
        });
        sign = -sign;
    }
    let mut spec = base_spec(
        "fast-pan-with-blur",
        13,
        row(240.0),
        CameraPath {
            start_deg: 0.0,
            segments,
            jitter_px: 1.0,
        },
    );
    spec.noise = NoiseModel {
        pose_base_deg: 30.0,
        pose_sigma_deg: 15.0,
        gaze_jitter_px: 4.0,
        blur,
        ..NoiseModel::default()
    };
    spec.gaze = scripted_gaze(&spec, 0.75, 1013);
    spec
}

fn reference_occlusion_heavy() -> ScenarioSpec {
    let mut spec = base_spec(
        "occlusion-heavy",
        14,
        row(200.0),
        CameraPath {
            jitter_px: 2.0,
            ..CameraPath::still()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1114);
    let mut occlusions = Vec::new();
    let mut frame = 30u64;
    let mut drop = true;
    while frame < 1750 {
        let len = rng.random_range(15..=45);
        occlusions.push(OcclusionEpisode {
            member: MemberId::from_index(rng.random_range(0..6)),
            start_frame: frame,
            end_frame: frame + len - 1,
            mode: if drop { OcclusionMode::Drop } else { OcclusionMode::Degrade },
            extra_deg: 60.0,
        });
        drop = !drop;
        frame += len + rng.random_range(30..90);
    }
    spec.noise = NoiseModel {
        pose_base_deg: 10.0,
        pose_sigma_deg: 10.0,
        gaze_jitter_px: 4.0,
        gaze_dropout: 0.01,
        spurious_rate: 0.02,
        identifier_jitter: 0.02,
        occlusions,
        ..NoiseModel::default()
    };
    spec.gaze = scripted_gaze(&spec, 0.75, 1014);
    spec
}
