//! Deterministic rendering of a scenario into frame observations plus the
//! matching ground truth.
//!
//! Every frame draws from its own ChaCha stream keyed by (seed, stream,
//! frame index), so a frame's content never depends on how many random
//! numbers earlier frames consumed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scenario::{GazeTarget, OcclusionMode, ScenarioError, ScenarioSpec};
use crate::frame::{BBox, FaceDetection, FrameObservation, GazeSample, MemberId, Point};
use crate::registration::AudienceLayout;

const STREAM_BASE: u64 = 1;
const STREAM_PRESENT: u64 = 2;
const STREAM_SWEEP: u64 = 3;

/// Gaze tracker rate; each frame is paired with the nearest sample.
pub const GAZE_RATE_HZ: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: u64,
    pub t: u64,
    /// Member under the gaze point, `None` when looking away from the audience.
    pub gazed: Option<MemberId>,
    /// True identity per detection, in detection order; `None` marks a
    /// spurious detection.
    pub detections: Vec<Option<MemberId>>,
    /// Whether each member's face projects fully inside the frame.
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub n_members: usize,
    pub frames: Vec<FrameTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub frames: Vec<FrameObservation>,
    pub truth: GroundTruth,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed ^ stream.rotate_left(32)) ^ index))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn clipped_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    (normal(rng) * sigma).clamp(-3.0 * sigma, 3.0 * sigma)
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Per-member unit appearance vectors.
pub fn base_vectors(spec: &ScenarioSpec) -> Vec<Vec<f64>> {
    (0..spec.n_members() as u64)
        .map(|m| {
            let mut rng = stream_rng(spec.seed, STREAM_BASE, m);
            let mut v: Vec<f64> = (0..spec.descriptor_dim).map(|_| normal(&mut rng)).collect();
            unit(&mut v);
            v
        })
        .collect()
}

/// The layout a perfect registration would produce: seats as offsets, base
/// vectors as templates.
pub fn truth_layout(spec: &ScenarioSpec) -> AudienceLayout {
    let entries = spec.seats.iter().map(|s| s.x).zip(base_vectors(spec)).collect();
    AudienceLayout::from_templates(entries).expect("validated scenarios give valid layouts")
}

/// Unit vector at angle `theta_deg` from `base`, in a random direction.
fn perturb(base: &[f64], theta_deg: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if theta_deg == 0.0 {
        return base.to_vec();
    }
    let mut u: Vec<f64> = base.iter().map(|_| normal(rng)).collect();
    let along: f64 = u.iter().zip(base).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(base).for_each(|(a, b)| *a -= along * b);
    unit(&mut u);
    let (s, c) = theta_deg.to_radians().sin_cos();
    base.iter().zip(&u).map(|(b, u)| c * b + s * u).collect()
}

fn detector_confidence(theta_deg: f64) -> f64 {
    (0.95 - 0.4 * (theta_deg / 90.0).min(1.0)).clamp(0.05, 1.0)
}

fn frame_time_ms(t_s: f64) -> u64 {
    (t_s * 1000.0).round() as u64
}

fn gaze_time_ms(t_s: f64) -> u64 {
    let tick = (t_s * GAZE_RATE_HZ).round();
    frame_time_ms(tick / GAZE_RATE_HZ)
}

struct Placed {
    member: Option<MemberId>,
    detection: FaceDetection,
}

/// Renders the presentation stage of a scenario.
pub fn generate_session(spec: &ScenarioSpec) -> Result<SimulatedSession, ScenarioError> {
    spec.validate()?;
    let bases = base_vectors(spec);
    let size = spec.frame_size;
    let [fw, fh] = spec.face_size;
    let noise = &spec.noise;
    let mut frames = Vec::with_capacity(spec.n_frames() as usize);
    let mut truth = Vec::with_capacity(spec.n_frames() as usize);
    let mut segment = 0usize;

    for i in 0..spec.n_frames() {
        let mut rng = stream_rng(spec.seed, STREAM_PRESENT, i);
        let t_s = spec.frame_time_s(i);
        let t = frame_time_ms(t_s);
        let jx = clipped_normal(&mut rng, spec.camera.jitter_px);
        let jy = clipped_normal(&mut rng, spec.camera.jitter_px);
        let pan = spec.camera.yaw_deg(t_s) * spec.px_per_degree;
        let blur: f64 = noise
            .blur
            .iter()
            .filter(|b| (b.start_frame..=b.end_frame).contains(&i))
            .map(|b| b.extra_deg)
            .sum();

        let mut placed = Vec::new();
        let mut visible = vec![false; spec.n_members()];
        let mut projected = Vec::with_capacity(spec.n_members());
        for (m, seat) in spec.seats.iter().enumerate() {
            let center = Point::new(seat.x - pan + size.width / 2.0 + jx, seat.y + jy);
            projected.push(center);
            let pose = noise.pose_base_deg + (normal(&mut rng) * noise.pose_sigma_deg).abs();
            let bbox = BBox::centered(center, fw, fh);
            visible[m] = bbox.within(size);
            if !visible[m] {
                continue;
            }
            let member = MemberId::from_index(m);
            let occlusion = noise
                .occlusions
                .iter()
                .find(|o| o.member == member && (o.start_frame..=o.end_frame).contains(&i));
            let (theta, confidence_scale) = match occlusion {
                Some(o) if o.mode == OcclusionMode::Drop => continue,
                Some(o) => (pose + blur + o.extra_deg, 0.5),
                None => (pose + blur, 1.0),
            };
            let descriptor = perturb(&bases[m], theta, &mut rng);
            placed.push(Placed {
                member: Some(member),
                detection: FaceDetection {
                    bbox,
                    center,
                    confidence: detector_confidence(theta) * confidence_scale,
                    descriptor,
                },
            });
        }

        while segment + 1 < spec.gaze.len() && spec.gaze[segment].end_s <= t_s + 1e-9 {
            segment += 1;
        }
        let gj = noise.gaze_jitter_px;
        let (gx, gy) = (clipped_normal(&mut rng, gj), clipped_normal(&mut rng, gj));
        let clamp_in = |p: Point| Point::new(p.x.clamp(0.0, size.width), p.y.clamp(0.0, size.height));
        let dropout = noise.gaze_dropout > 0.0 && rng.random_bool(noise.gaze_dropout);
        let (gaze_point, gazed) = match &spec.gaze[segment].target {
            GazeTarget::Member(m) => {
                let c = projected[m.index()];
                if let Some(p) = placed.iter().find(|p| p.member == Some(*m)) {
                    let c = p.detection.center;
                    (clamp_in(Point::new(c.x + gx, c.y + gy)), Some(*m))
                } else if size.contains(&c) {
                    // in view but occluded
                    (clamp_in(Point::new(c.x + gx, c.y + gy)), None)
                } else {
                    // turned toward a member outside the scene camera's view
                    (clamp_in(Point::new(c.x, 0.1 * size.height + gy)), None)
                }
            }
            GazeTarget::Region(name) => {
                let r = spec.region(name).expect("validated region");
                let p = Point::new(r.x_frac * size.width + gx, r.y_frac * size.height + gy);
                (clamp_in(p), None)
            }
        };
        let gaze_t = gaze_time_ms(t_s);
        let (gaze, gazed) = if dropout {
            (GazeSample::invalid(gaze_t), None)
        } else {
            (GazeSample::valid(gaze_t, gaze_point), gazed)
        };

        if noise.spurious_rate > 0.0 && rng.random_bool(noise.spurious_rate) {
            for _ in 0..20 {
                let c = Point::new(
                    rng.random_range(fw / 2.0..size.width - fw / 2.0),
                    rng.random_range(fh / 2.0..size.height - fh / 2.0),
                );
                let clear_of_gaze = c.distance(&gaze_point) >= 0.1 * size.width;
                let clear_of_faces = placed.iter().all(|p| p.detection.center.distance(&c) >= 1.5 * fw);
                if clear_of_gaze && clear_of_faces {
                    let mut descriptor: Vec<f64> =
                        (0..spec.descriptor_dim).map(|_| normal(&mut rng)).collect();
                    unit(&mut descriptor);
                    placed.push(Placed {
                        member: None,
                        detection: FaceDetection::at(c, fw, fh, 0.5, descriptor),
                    });
                    break;
                }
            }
        }

        placed.shuffle(&mut rng);
        truth.push(FrameTruth {
            frame_id: i,
            t,
            gazed,
            detections: placed.iter().map(|p| p.member).collect(),
            visible,
        });
        frames.push(FrameObservation {
            frame_id: i,
            t,
            frame_size: size,
            gaze,
            detections: placed.into_iter().map(|p| p.detection).collect(),
        });
    }

    Ok(SimulatedSession {
        frames,
        truth: GroundTruth {
            scenario: spec.name.clone(),
            n_members: spec.n_members(),
            frames: truth,
        },
    })
}

/// Renders the registration sweep: a linear left-to-right pan with no gaze.
pub fn generate_sweep(spec: &ScenarioSpec) -> Result<SimulatedSession, ScenarioError> {
    spec.validate()?;
    let sweep = spec.sweep_or_default();
    let bases = base_vectors(spec);
    let size = spec.frame_size;
    let [fw, fh] = spec.face_size;
    let n = (sweep.duration_s * spec.frame_rate_hz).round() as u64;
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n {
        let mut rng = stream_rng(spec.seed, STREAM_SWEEP, i);
        let t_s = spec.frame_time_s(i);
        let t = frame_time_ms(t_s);
        let progress = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let pan = sweep.start_px + (sweep.end_px - sweep.start_px) * progress;
        let jx = clipped_normal(&mut rng, spec.camera.jitter_px);
        let jy = clipped_normal(&mut rng, spec.camera.jitter_px);
        let mut placed = Vec::new();
        let mut visible = vec![false; spec.n_members()];
        for (m, seat) in spec.seats.iter().enumerate() {
            let center = Point::new(seat.x - pan + size.width / 2.0 + jx, seat.y + jy);
            let theta = (normal(&mut rng) * sweep.pose_sigma_deg).abs();
            let bbox = BBox::centered(center, fw, fh);
            visible[m] = bbox.within(size);
            if visible[m] {
                placed.push(Placed {
                    member: Some(MemberId::from_index(m)),
                    detection: FaceDetection {
                        bbox,
                        center,
                        confidence: detector_confidence(theta),
                        descriptor: perturb(&bases[m], theta, &mut rng),
                    },
                });
            }
        }
        placed.shuffle(&mut rng);
        truth.push(FrameTruth {
            frame_id: i,
            t,
            gazed: None,
            detections: placed.iter().map(|p| p.member).collect(),
            visible,
        });
        frames.push(FrameObservation {
            frame_id: i,
            t,
            frame_size: size,
            gaze: GazeSample::invalid(t),
            detections: placed.into_iter().map(|p| p.detection).collect(),
        });
    }
    Ok(SimulatedSession {
        frames,
        truth: GroundTruth {
            scenario: format!("{}-sweep", spec.name),
            n_members: spec.n_members(),
            frames: truth,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::scenario::{CameraPath, GazeSegment, OcclusionEpisode, PanSegment};

    fn fixed_gaze(spec: &mut ScenarioSpec, target: &str) {
        spec.gaze = vec![GazeSegment {
            start_s: 0.0,
            end_s: spec.duration_s,
            target: target.parse().unwrap(),
        }];
    }

    #[test]
    fn static_camera_fixed_gaze() {
        let mut spec = ScenarioSpec::reference("static").unwrap();
        spec.duration_s = 10.0;
        spec.camera.jitter_px = 0.0;
        fixed_gaze(&mut spec, "S_3");
        let sim = generate_session(&spec).unwrap();
        assert_eq!(sim.frames.len(), 300);
        assert!(sim.truth.frames.iter().all(|f| f.gazed == Some(MemberId::new(3))));
        assert!(sim.frames.iter().all(|f| f.detections.len() == 6));
        for (f, t) in sim.frames.iter().zip(&sim.truth.frames) {
            let i = t.detections.iter().position(|m| *m == Some(MemberId::new(3))).unwrap();
            assert_eq!(f.gaze.point, f.detections[i].center);
            f.validate(spec.descriptor_dim, 16).unwrap();
        }
    }

    #[test]
    fn visibility_changes_at_projection_boundaries() {
        let mut spec = ScenarioSpec::reference("static").unwrap();
        spec.duration_s = 4.0;
        spec.camera = CameraPath {
            start_deg: 0.0,
            segments: vec![PanSegment {
                duration_s: 4.0,
                rate_deg_s: 10.0,
            }],
            jitter_px: 0.0,
        };
        fixed_gaze(&mut spec, "slides");
        let sim = generate_session(&spec).unwrap();
        let (w, fw) = (spec.frame_size.width, spec.face_size[0]);
        for (i, t) in sim.truth.frames.iter().enumerate() {
            let pan = 10.0 * spec.frame_time_s(i as u64) * spec.px_per_degree;
            for (m, seat) in spec.seats.iter().enumerate() {
                // analytic projection: box [x - fw/2, x + fw/2] inside [0, w]
                let x = seat.x - pan + w / 2.0;
                let expected = x - fw / 2.0 >= 0.0 && x + fw / 2.0 <= w;
                assert_eq!(t.visible[m], expected, "frame {i} member {m}");
            }
        }
        // S_1 leaves view during the pan
        assert!(sim.truth.frames[0].visible[0]);
        assert!(!sim.truth.frames.last().unwrap().visible[0]);
    }

    #[test]
    fn occlusion_drops_exactly_the_episode_frames() {
        let mut spec = ScenarioSpec::reference("static").unwrap();
        spec.duration_s = 8.0;
        fixed_gaze(&mut spec, "S_1");
        spec.noise.occlusions = vec![OcclusionEpisode {
            member: MemberId::new(2),
            start_frame: 100,
            end_frame: 150,
            mode: OcclusionMode::Drop,
            extra_deg: 60.0,
        }];
        let sim = generate_session(&spec).unwrap();
        for t in &sim.truth.frames {
            let present = t.detections.contains(&Some(MemberId::new(2)));
            assert_eq!(present, !(100..=150).contains(&t.frame_id), "frame {}", t.frame_id);
        }

        spec.noise.occlusions[0].mode = OcclusionMode::Degrade;
        let sim = generate_session(&spec).unwrap();
        for (f, t) in sim.frames.iter().zip(&sim.truth.frames) {
            let i = t.detections.iter().position(|m| *m == Some(MemberId::new(2))).unwrap();
            let low = f.detections[i].confidence < 0.5;
            assert_eq!(low, (100..=150).contains(&t.frame_id));
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = ScenarioSpec::reference("occlusion-heavy").unwrap();
        let a = generate_session(&spec).unwrap();
        let b = generate_session(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate_session(&other).unwrap().frames, a.frames);
    }

    #[test]
    fn truth_is_consistent_with_frames() {
        for name in crate::simulator::REFERENCE_SCENARIOS {
            let spec = ScenarioSpec::reference(name).unwrap();
            let sim = generate_session(&spec).unwrap();
            for (f, t) in sim.frames.iter().zip(&sim.truth.frames) {
                assert_eq!(f.frame_id, t.frame_id);
                assert_eq!(f.detections.len(), t.detections.len());
                f.validate(spec.descriptor_dim, 16).unwrap();
                if let Some(m) = t.gazed {
                    assert!(t.detections.contains(&Some(m)));
                    assert!(f.gaze.valid);
                }
            }
        }
    }

    #[test]
    fn sweep_sees_every_member() {
        let spec = ScenarioSpec::reference("slow-pan").unwrap();
        let sweep = generate_sweep(&spec).unwrap();
        for m in 0..6 {
            let seen = sweep.truth.frames.iter().filter(|f| f.visible[m]).count();
            assert!(seen >= 2, "member {m} seen {seen} times");
        }
        assert!(sweep.frames.iter().all(|f| !f.gaze.valid));
    }
}
