//! Windowed gaze-distribution counters and the metrics derived from them:
//! eye-contact proportion (EP), eye-contact distribution (ED) and gaze
//! distribution entropy (GDE).
//!
//! Counters are exact integers; ratios are only formed at query time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::MemberId;
use crate::identification::{Classification, FrameAttention};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("window has no frames")]
    EmptyWindow,
    #[error("window has no audience-directed frames")]
    NoEyeContact,
    #[error("all member counts are zero")]
    ZeroCounts,
    #[error("frame at {t} ms lies outside window [{start}, {end})")]
    OutsideWindow { t: u64, start: u64, end: u64 },
    #[error("{0} is not a member of this window")]
    UnknownMember(MemberId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazeDistribution {
    pub window_id: u64,
    /// Half-open span `[start, end)` in session milliseconds.
    pub span: (u64, u64),
    /// All frames in the window (X).
    pub total: u64,
    /// Frames with a selected target face (X̄).
    pub audience: u64,
    /// Identified frames per member (X_i), indexed by ordinal - 1.
    pub per_member: Vec<u64>,
    pub unidentified: u64,
}

impl GazeDistribution {
    pub fn new(window_id: u64, span: (u64, u64), n_members: usize) -> Self {
        Self {
            window_id,
            span,
            total: 0,
            audience: 0,
            per_member: vec![0; n_members],
            unidentified: 0,
        }
    }

    fn check_span(&self, t: u64) -> Result<(), MetricsError> {
        if t < self.span.0 || t >= self.span.1 {
            return Err(MetricsError::OutsideWindow {
                t,
                start: self.span.0,
                end: self.span.1,
            });
        }
        Ok(())
    }

    /// Counts one identified frame at session time `t`.
    pub fn update(&mut self, t: u64, fa: &FrameAttention) -> Result<(), MetricsError> {
        self.record(t, fa.classification)
    }

    pub fn record(&mut self, t: u64, classification: Classification) -> Result<(), MetricsError> {
        self.check_span(t)?;
        if let Classification::AudienceIdentified { member } = classification {
            if member.index() >= self.per_member.len() {
                return Err(MetricsError::UnknownMember(member));
            }
        }
        self.total += 1;
        match classification {
            Classification::NonAudience => {}
            Classification::AudienceIdentified { member } => {
                self.audience += 1;
                self.per_member[member.index()] += 1;
            }
            Classification::AudienceUnidentified => {
                self.audience += 1;
                self.unidentified += 1;
            }
        }
        Ok(())
    }

    /// A dropped frame counts toward X only.
    pub fn record_dropped(&mut self, t: u64) -> Result<(), MetricsError> {
        self.check_span(t)?;
        self.total += 1;
        Ok(())
    }

    /// EP = X̄ / X · 100.
    pub fn eye_contact_proportion(&self) -> Result<f64, MetricsError> {
        if self.total == 0 {
            return Err(MetricsError::EmptyWindow);
        }
        Ok(self.audience as f64 / self.total as f64 * 100.0)
    }

    /// ED(S_i) = X_i / X̄ · 100.
    pub fn eye_contact_distribution(&self, member: MemberId) -> Result<f64, MetricsError> {
        let count = *self
            .per_member
            .get(member.index())
            .ok_or(MetricsError::UnknownMember(member))?;
        if self.audience == 0 {
            return Err(MetricsError::NoEyeContact);
        }
        Ok(count as f64 / self.audience as f64 * 100.0)
    }

    /// ED for every member, in ordinal order.
    pub fn distribution(&self) -> Result<Vec<f64>, MetricsError> {
        if self.audience == 0 {
            return Err(MetricsError::NoEyeContact);
        }
        Ok(self
            .per_member
            .iter()
            .map(|&c| c as f64 / self.audience as f64 * 100.0)
            .collect())
    }

    /// Share of audience-directed frames whose identity is unknown, percent.
    pub fn unidentified_share(&self) -> Result<f64, MetricsError> {
        if self.audience == 0 {
            return Err(MetricsError::NoEyeContact);
        }
        Ok(self.unidentified as f64 / self.audience as f64 * 100.0)
    }

    pub fn entropy(&self) -> Result<f64, MetricsError> {
        gaze_distribution_entropy(&self.per_member)
    }

    /// `X̄ = ΣX_i + X_unidentified` and `X ≥ X̄`.
    pub fn is_consistent(&self) -> bool {
        self.total >= self.audience
            && self.audience == self.per_member.iter().sum::<u64>() + self.unidentified
    }
}

/// Shannon entropy (natural log) of the per-member gaze counts, with the
/// convention `0 · ln 0 = 0`. Ranges over `[0, ln N]`.
pub fn gaze_distribution_entropy(counts: &[u64]) -> Result<f64, MetricsError> {
    let sum: u64 = counts.iter().sum();
    if sum == 0 {
        return Err(MetricsError::ZeroCounts);
    }
    let sum = sum as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / sum;
            -p * p.ln()
        })
        .sum();
    // A single nonzero count gives -1·ln 1 = -0.0; report it as 0.
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classified(c: Classification) -> FrameAttention {
        FrameAttention {
            frame_id: 0,
            classification: c,
            identifier_invoked: false,
            anchor_after: Default::default(),
            assignments: vec![],
        }
    }

    fn window(n: usize) -> GazeDistribution {
        GazeDistribution::new(0, (0, 30_000), n)
    }

    #[test]
    fn non_audience_frame_only_counts_x() {
        let mut w = window(6);
        w.update(10, &classified(Classification::NonAudience)).unwrap();
        assert_eq!((w.total, w.audience, w.unidentified), (1, 0, 0));
        assert_eq!(w.per_member, vec![0; 6]);
    }

    #[test]
    fn identified_frame_counts_member() {
        let mut w = window(6);
        let s3 = MemberId::new(3);
        w.update(10, &classified(Classification::AudienceIdentified { member: s3 })).unwrap();
        assert_eq!((w.total, w.audience), (1, 1));
        assert_eq!(w.per_member[2], 1);
    }

    #[test]
    fn all_identified_stream() {
        let mut w = GazeDistribution::new(0, (0, 1_000_000), 6);
        for i in 0..855u64 {
            let member = MemberId::new((i % 6) as u32 + 1);
            w.update(i * 33, &classified(Classification::AudienceIdentified { member })).unwrap();
        }
        assert_eq!(w.total, 855);
        assert_eq!(w.audience, 855);
        assert_eq!(w.eye_contact_proportion().unwrap(), 100.0);
    }

    #[test]
    fn frames_outside_span_are_rejected() {
        let mut w = window(2);
        let err = w.update(30_000, &classified(Classification::NonAudience)).unwrap_err();
        assert!(matches!(err, MetricsError::OutsideWindow { .. }));
        assert_eq!(w.total, 0);
    }

    #[test]
    fn eye_contact_proportion_examples() {
        let mut w = window(2);
        assert_eq!(w.eye_contact_proportion(), Err(MetricsError::EmptyWindow));
        w.total = 200;
        w.audience = 30;
        w.unidentified = 30;
        assert_eq!(w.eye_contact_proportion().unwrap(), 15.0);
        w.audience = 0;
        w.unidentified = 0;
        assert_eq!(w.eye_contact_proportion().unwrap(), 0.0);
    }

    #[test]
    fn eye_contact_distribution_examples() {
        let mut w = window(6);
        w.total = 300;
        w.audience = 120;
        w.per_member = vec![90, 30, 0, 0, 0, 0];
        assert_eq!(w.eye_contact_distribution(MemberId::new(2)).unwrap(), 25.0);

        w.audience = 100;
        w.per_member = vec![80, 0, 0, 0, 0, 0];
        w.unidentified = 20;
        assert_eq!(w.eye_contact_distribution(MemberId::new(1)).unwrap(), 80.0);
        let sum: f64 = w.distribution().unwrap().iter().sum();
        assert_eq!(sum, 80.0);
        assert_eq!(sum + w.unidentified_share().unwrap(), 100.0);

        w.audience = 0;
        w.per_member = vec![0; 6];
        w.unidentified = 0;
        assert_eq!(w.eye_contact_distribution(MemberId::new(1)), Err(MetricsError::NoEyeContact));
    }

    #[test]
    fn entropy_examples() {
        let uniform = gaze_distribution_entropy(&[7; 6]).unwrap();
        assert!((uniform - 6f64.ln()).abs() < 1e-12);
        assert_eq!(gaze_distribution_entropy(&[0, 0, 42, 0]).unwrap(), 0.0);
        // direct-summation oracle: -(4 · 0.2 ln 0.2 + 2 · 0.1 ln 0.1)
        let got = gaze_distribution_entropy(&[10, 10, 10, 10, 5, 5]).unwrap();
        assert!((got - 1.748_067_348_546_089).abs() < 1e-12, "{got}");
        assert_eq!(gaze_distribution_entropy(&[0, 0]), Err(MetricsError::ZeroCounts));
        assert_eq!(gaze_distribution_entropy(&[]), Err(MetricsError::ZeroCounts));
    }

    proptest! {
        #[test]
        fn conservation_holds(
            cls in proptest::collection::vec(0u32..8, 1..400),
        ) {
            let mut w = GazeDistribution::new(0, (0, u64::MAX), 6);
            for (i, c) in cls.iter().enumerate() {
                let c = match c {
                    0 => Classification::NonAudience,
                    7 => Classification::AudienceUnidentified,
                    m => Classification::AudienceIdentified { member: MemberId::new(*m) },
                };
                w.record(i as u64, c).unwrap();
            }
            prop_assert!(w.is_consistent());
            let ep = w.eye_contact_proportion().unwrap();
            prop_assert!((0.0..=100.0).contains(&ep));
            if w.audience > 0 {
                let total: f64 = w.distribution().unwrap().iter().sum::<f64>() + w.unidentified_share().unwrap();
                prop_assert!((total - 100.0).abs() < 1e-9);
            }
        }
    }
}
