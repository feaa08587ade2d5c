//! Scoring identification methods against simulator ground truth.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::render::{generate_session, generate_sweep, FrameTruth, SimulatedSession};
use super::scenario::{ScenarioError, ScenarioSpec};
use super::synthetic::build_identifier;
use crate::config::{EngineConfig, IdentificationConfig, IdentifierConfig};
use crate::exec::Execution;
use crate::frame::{FrameObservation, MemberId};
use crate::identification::{
    AnchorIdentifier, BaselineIdentifier, Classification, FrameAttention, FrameIdentifier, IdentifierProvider,
};
use crate::registration::{register_sweep, AudienceLayout, RegistrationError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("registration failed: {0}")]
    Registration(#[from] RegistrationError),
    #[error("unknown method {0:?} (expected anchor or baseline)")]
    UnknownMethod(String),
    #[error("prediction {index} is for frame {predicted} but truth is for frame {truth}")]
    Misaligned { index: usize, predicted: u64, truth: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Anchor,
    Baseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Anchor => "anchor",
            Method::Baseline => "baseline",
        })
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "anchor" => Ok(Method::Anchor),
            "baseline" => Ok(Method::Baseline),
            other => Err(BenchError::UnknownMethod(other.to_string())),
        }
    }
}

/// Output of one method over one frame stream.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub attention: Vec<FrameAttention>,
    /// Wall-clock processing time per frame, nanoseconds.
    pub latencies_ns: Vec<u64>,
}

/// Drives `method` over `frames` in order, timing each frame.
pub fn run_method(
    method: Method,
    frames: &[FrameObservation],
    layout: &AudienceLayout,
    ident: &dyn IdentifierProvider,
    cfg: &IdentificationConfig,
) -> MethodRun {
    let mut driver: Box<dyn FrameIdentifier + '_> = match method {
        Method::Anchor => Box::new(AnchorIdentifier::new(layout, ident, cfg.clone())),
        Method::Baseline => Box::new(BaselineIdentifier::new(layout, ident, cfg.clone())),
    };
    let mut attention = Vec::with_capacity(frames.len());
    let mut latencies_ns = Vec::with_capacity(frames.len());
    for f in frames {
        let start = Instant::now();
        let fa = driver.process(f);
        latencies_ns.push(start.elapsed().as_nanos() as u64);
        attention.push(fa);
    }
    MethodRun {
        method,
        attention,
        latencies_ns,
    }
}

/// Identity of the gazed face as reported by a classification.
fn gazed_member(c: &Classification) -> Option<MemberId> {
    match c {
        Classification::AudienceIdentified { member } => Some(*member),
        _ => None,
    }
}

/// Percentage of detected faces whose assigned identity equals the truth
/// (`None` for spurious faces). 100 when no faces were detected.
pub fn face_accuracy(attention: &[FrameAttention], truth: &[FrameTruth]) -> f64 {
    let (mut correct, mut faces) = (0u64, 0u64);
    for (fa, t) in attention.iter().zip(truth) {
        debug_assert_eq!(fa.frame_id, t.frame_id);
        faces += t.detections.len() as u64;
        correct += fa.assignments.iter().zip(&t.detections).filter(|(a, b)| a == b).count() as u64;
    }
    if faces == 0 {
        100.0
    } else {
        correct as f64 / faces as f64 * 100.0
    }
}

/// Percentage of frames whose gazed-member output equals the truth, where
/// non-audience and unidentified both count as "no member".
pub fn target_agreement(attention: &[FrameAttention], truth: &[FrameTruth]) -> f64 {
    if attention.is_empty() {
        return 100.0;
    }
    let agree = attention
        .iter()
        .zip(truth)
        .filter(|(fa, t)| gazed_member(&fa.classification) == t.gazed)
        .count();
    agree as f64 / attention.len() as f64 * 100.0
}

/// Exhaustive reference for the gazed member: the truth identity of the
/// detection nearest the gaze point, if closer than `radius`. Computed by a
/// plain scan over all detections, independent of the identification code.
pub fn brute_force_targets(frames: &[FrameObservation], truth: &[FrameTruth], radius: f64) -> Vec<Option<MemberId>> {
    frames
        .iter()
        .zip(truth)
        .map(|(f, t)| {
            if !f.gaze.valid {
                return None;
            }
            let mut best: Option<(f64, f64, usize)> = None;
            for (i, d) in f.detections.iter().enumerate() {
                let dist = ((d.center.x - f.gaze.point.x).powi(2) + (d.center.y - f.gaze.point.y).powi(2)).sqrt();
                let key = (dist, d.center.x, i);
                if dist < radius && best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some(key);
                }
            }
            best.and_then(|(_, _, i)| t.detections[i])
        })
        .collect()
}

/// Target frames after the first anchor establishment, and how many of them
/// the method named exactly as the oracle did. A target frame is one whose
/// oracle target is an audience member.
pub fn oracle_equivalence(attention: &[FrameAttention], oracle: &[Option<MemberId>]) -> (u64, u64) {
    let Some(first) = attention.iter().position(|fa| fa.anchor_after.is_established()) else {
        return (0, 0);
    };
    let (mut matched, mut total) = (0, 0);
    for (fa, want) in attention[first..].iter().zip(&oracle[first..]) {
        if let Some(m) = want {
            total += 1;
            matched += u64::from(gazed_member(&fa.classification) == Some(*m));
        }
    }
    (matched, total)
}

/// Percentage of frames in which the identifier ran.
pub fn invocation_fraction(attention: &[FrameAttention]) -> f64 {
    if attention.is_empty() {
        return 0.0;
    }
    let n = attention.iter().filter(|fa| fa.identifier_invoked).count();
    n as f64 / attention.len() as f64 * 100.0
}

/// Median, 95th percentile and mean, in milliseconds.
pub fn latency_summary(latencies_ns: &[u64]) -> (f64, f64, f64) {
    if latencies_ns.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut v = latencies_ns.to_vec();
    v.sort_unstable();
    let pick = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize] as f64 / 1e6;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64 / 1e6;
    (pick(0.5), pick(0.95), mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub frames: u64,
    pub faces: u64,
    pub accuracy_pct: f64,
    pub target_agreement_pct: f64,
    pub invocation_pct: f64,
    pub latency_median_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_mean_ms: f64,
}

/// Checks that predictions and truth cover the same frames in the same order.
pub fn check_alignment(attention: &[FrameAttention], truth: &[FrameTruth]) -> Result<(), BenchError> {
    for (index, (a, t)) in attention.iter().zip(truth).enumerate() {
        if a.frame_id != t.frame_id || a.assignments.len() != t.detections.len() {
            return Err(BenchError::Misaligned {
                index,
                predicted: a.frame_id,
                truth: t.frame_id,
            });
        }
    }
    if attention.len() != truth.len() {
        let index = attention.len().min(truth.len());
        return Err(BenchError::Misaligned {
            index,
            predicted: attention.get(index).map_or(u64::MAX, |a| a.frame_id),
            truth: truth.get(index).map_or(u64::MAX, |t| t.frame_id),
        });
    }
    Ok(())
}

pub fn score_run(scenario: &str, seed: u64, run: &MethodRun, truth: &[FrameTruth]) -> Result<BenchRow, BenchError> {
    check_alignment(&run.attention, truth)?;
    let (median, p95, mean) = latency_summary(&run.latencies_ns);
    Ok(BenchRow {
        scenario: scenario.to_string(),
        method: run.method,
        seed,
        frames: run.attention.len() as u64,
        faces: truth.iter().map(|t| t.detections.len() as u64).sum(),
        accuracy_pct: face_accuracy(&run.attention, truth),
        target_agreement_pct: target_agreement(&run.attention, truth),
        invocation_pct: invocation_fraction(&run.attention),
        latency_median_ms: median,
        latency_p95_ms: p95,
        latency_mean_ms: mean,
    })
}

/// Identifier provider matching a scenario's recognition noise.
pub fn scenario_identifier(spec: &ScenarioSpec) -> IdentifierConfig {
    if spec.noise.identifier_jitter > 0.0 {
        IdentifierConfig::Synthetic {
            seed: spec.seed,
            jitter: spec.noise.identifier_jitter,
        }
    } else {
        IdentifierConfig::Cosine
    }
}

/// A scenario rendered and registered, ready for identification.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub spec: ScenarioSpec,
    pub layout: AudienceLayout,
    pub session: SimulatedSession,
}

/// Renders the sweep, registers it, and renders the presentation stage.
pub fn prepare(spec: &ScenarioSpec, cfg: &EngineConfig) -> Result<PreparedScenario, BenchError> {
    let sweep = generate_sweep(spec)?;
    let layout = register_sweep(&sweep.frames, &cfg.registration)?;
    let session = generate_session(spec)?;
    Ok(PreparedScenario {
        spec: spec.clone(),
        layout,
        session,
    })
}

/// Scores each method on one prepared scenario. Methods run sequentially so
/// their latencies are comparable.
pub fn bench_prepared(
    p: &PreparedScenario,
    methods: &[Method],
    cfg: &IdentificationConfig,
) -> Result<Vec<BenchRow>, BenchError> {
    let ident = build_identifier(&scenario_identifier(&p.spec), p.layout.descriptor_dim());
    methods
        .iter()
        .map(|&m| {
            let run = run_method(m, &p.session.frames, &p.layout, ident.as_ref(), cfg);
            score_run(&p.spec.name, p.spec.seed, &run, &p.session.truth.frames)
        })
        .collect()
}

/// Benchmarks `methods` on `spec` under each seed. Seeds are independent and
/// may run in parallel; rows come back in seed order.
pub fn bench_scenario(
    spec: &ScenarioSpec,
    seeds: &[u64],
    methods: &[Method],
    cfg: &EngineConfig,
    exec: Execution,
) -> Result<BenchReport, BenchError> {
    let per_seed = exec.map(seeds, |&seed| {
        let mut s = spec.clone();
        s.seed = seed;
        prepare(&s, cfg).and_then(|p| bench_prepared(&p, methods, &cfg.identification))
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(BenchReport { rows })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    /// Mean over seeds for each (scenario, method), in first-seen order.
    pub fn summary(&self) -> Vec<BenchRow> {
        let mut keys: Vec<(String, Method)> = Vec::new();
        for r in &self.rows {
            let k = (r.scenario.clone(), r.method);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(scenario, method)| {
                let rows: Vec<&BenchRow> =
                    self.rows.iter().filter(|r| r.scenario == scenario && r.method == method).collect();
                let n = rows.len() as f64;
                let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                BenchRow {
                    scenario,
                    method,
                    seed: rows[0].seed,
                    frames: rows.iter().map(|r| r.frames).sum(),
                    faces: rows.iter().map(|r| r.faces).sum(),
                    accuracy_pct: mean(|r| r.accuracy_pct),
                    target_agreement_pct: mean(|r| r.target_agreement_pct),
                    invocation_pct: mean(|r| r.invocation_pct),
                    latency_median_ms: mean(|r| r.latency_median_ms),
                    latency_p95_ms: mean(|r| r.latency_p95_ms),
                    latency_mean_ms: mean(|r| r.latency_mean_ms),
                }
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| scenario | method | frames | accuracy % | target agreement % | identifier calls % | median ms | p95 ms |\n\
             |---|---|---:|---:|---:|---:|---:|---:|\n",
        );
        for r in self.summary() {
            out.push_str(&format!(
                "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.4} | {:.4} |\n",
                r.scenario,
                r.method,
                r.frames,
                r.accuracy_pct,
                r.target_agreement_pct,
                r.invocation_pct,
                r.latency_median_ms,
                r.latency_p95_ms
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identification::AnchorState;

    #[test]
    fn misaligned_streams_are_rejected() {
        let att = vec![fa(0, Classification::NonAudience, vec![]), fa(2, Classification::NonAudience, vec![])];
        let tr = vec![truth(0, None, vec![]), truth(1, None, vec![])];
        assert!(matches!(
            check_alignment(&att, &tr),
            Err(BenchError::Misaligned { index: 1, predicted: 2, truth: 1 })
        ));
        assert!(matches!(check_alignment(&att[..1], &tr), Err(BenchError::Misaligned { index: 1, .. })));
    }

    fn fa(frame_id: u64, classification: Classification, assignments: Vec<Option<MemberId>>) -> FrameAttention {
        FrameAttention {
            frame_id,
            classification,
            identifier_invoked: frame_id == 0,
            anchor_after: AnchorState::Absent,
            assignments,
        }
    }

    fn truth(frame_id: u64, gazed: Option<MemberId>, detections: Vec<Option<MemberId>>) -> FrameTruth {
        FrameTruth {
            frame_id,
            t: frame_id * 33,
            gazed,
            detections,
            visible: vec![],
        }
    }

    #[test]
    fn accuracy_counts_every_face() {
        let s = |i| Some(MemberId::new(i));
        let att = vec![
            fa(0, Classification::NonAudience, vec![s(1), s(2)]),
            fa(1, Classification::NonAudience, vec![s(1), None]),
        ];
        let tr = vec![truth(0, None, vec![s(1), s(2)]), truth(1, None, vec![s(2), None])];
        assert_eq!(face_accuracy(&att, &tr), 75.0);
        assert_eq!(face_accuracy(&[], &[]), 100.0);
        assert_eq!(invocation_fraction(&att), 50.0);
    }

    #[test]
    fn target_agreement_treats_unidentified_as_no_member() {
        let s3 = MemberId::new(3);
        let att = vec![
            fa(0, Classification::AudienceIdentified { member: s3 }, vec![]),
            fa(1, Classification::AudienceUnidentified, vec![]),
            fa(2, Classification::AudienceUnidentified, vec![]),
        ];
        let tr = vec![truth(0, Some(s3), vec![]), truth(1, None, vec![]), truth(2, Some(s3), vec![])];
        assert!((target_agreement(&att, &tr) - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn latency_quantiles() {
        let ns: Vec<u64> = (1..=100).map(|i| i * 1_000_000).collect();
        let (median, p95, mean) = latency_summary(&ns);
        assert_eq!(median, 51.0);
        assert_eq!(p95, 95.0);
        assert_eq!(mean, 50.5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Anchor, Method::Baseline] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("oracle".parse::<Method>().is_err());
    }

    #[test]
    fn report_formats() {
        let row = BenchRow {
            scenario: "static".into(),
            method: Method::Anchor,
            seed: 1,
            frames: 10,
            faces: 60,
            accuracy_pct: 100.0,
            target_agreement_pct: 100.0,
            invocation_pct: 10.0,
            latency_median_ms: 0.01,
            latency_p95_ms: 0.02,
            latency_mean_ms: 0.01,
        };
        let report = BenchReport { rows: vec![row.clone(), BenchRow { seed: 2, accuracy_pct: 90.0, ..row }] };
        let csv = report.to_csv();
        assert!(csv.starts_with("scenario,method,seed,"));
        assert_eq!(csv.lines().count(), 3);
        let md = report.to_markdown();
        assert!(md.contains("| static | anchor | 20 | 95.00 |"), "{md}");
    }
}
