//! Identifier providers for simulated sessions.

use super::render::splitmix64;
use crate::config::IdentifierConfig;
use crate::frame::{FaceDetection, MemberId};
use crate::identification::{best_of, template_scores, CosineIdentifier, Identification, IdentifierProvider};
use crate::registration::AudienceLayout;

/// Cosine scores lowered by a deterministic per-(detection, member) penalty
/// in `[0, jitter]`, modelling an imperfect recognition model. Noise only
/// ever reduces confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticIdentifier {
    dim: usize,
    seed: u64,
    jitter: f64,
}

impl SyntheticIdentifier {
    pub fn new(dim: usize, seed: u64, jitter: f64) -> Self {
        Self { dim, seed, jitter }
    }

    fn offset(&self, descriptor_hash: u64, member: MemberId) -> f64 {
        let h = splitmix64(descriptor_hash ^ splitmix64(self.seed ^ u64::from(member.ordinal())));
        // 53 high bits to [0, 1)
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        -u * self.jitter
    }
}

fn descriptor_hash(descriptor: &[f64]) -> u64 {
    descriptor
        .iter()
        .fold(0x51_7cc1_b727_220a, |h, x| splitmix64(h ^ x.to_bits()))
}

impl IdentifierProvider for SyntheticIdentifier {
    fn descriptor_dim(&self) -> usize {
        self.dim
    }

    fn identify(&self, detection: &FaceDetection, layout: &AudienceLayout) -> Identification {
        let h = descriptor_hash(&detection.descriptor);
        best_of(
            template_scores(&detection.descriptor, layout)
                .map(|(m, s)| (m, (s + self.offset(h, m)).clamp(0.0, 1.0))),
        )
    }
}

/// Builds the provider named in a session configuration.
pub fn build_identifier(cfg: &IdentifierConfig, dim: usize) -> Box<dyn IdentifierProvider> {
    match *cfg {
        IdentifierConfig::Cosine => Box::new(CosineIdentifier::new(dim)),
        IdentifierConfig::Synthetic { seed, jitter } => Box::new(SyntheticIdentifier::new(dim, seed, jitter)),
    }
}
