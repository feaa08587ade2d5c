//! Engine configuration. Every threshold is configurable; defaults are the
//! values the engine was tuned with.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A pixel distance given either absolutely or as a fraction of frame width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelThreshold {
    Px(f64),
    FrameFraction(f64),
}

impl PixelThreshold {
    pub fn resolve(self, frame_width: f64) -> f64 {
        match self {
            PixelThreshold::Px(px) => px,
            PixelThreshold::FrameFraction(f) => f * frame_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    /// Maximum gaze-to-face distance for a face to become the target (L).
    pub target_radius: PixelThreshold,
    /// Maximum displacement for the anchor to be tracked between frames.
    pub track_gate: PixelThreshold,
    /// Minimum identifier confidence to accept a new anchor (p).
    pub anchor_confidence: f64,
    /// Per-detection acceptance threshold of the baseline identifier.
    pub baseline_sim_threshold: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            target_radius: PixelThreshold::FrameFraction(0.05),
            track_gate: PixelThreshold::FrameFraction(0.08),
            anchor_confidence: 0.8,
            baseline_sim_threshold: 0.8,
        }
    }
}

/// Identification thresholds resolved to pixels for one frame width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationParams {
    pub target_radius_px: f64,
    pub track_gate_px: f64,
    pub anchor_confidence: f64,
    pub baseline_sim_threshold: f64,
}

impl IdentificationConfig {
    pub fn resolve(&self, frame_width: f64) -> IdentificationParams {
        IdentificationParams {
            target_radius_px: self.target_radius.resolve(frame_width),
            track_gate_px: self.track_gate.resolve(frame_width),
            anchor_confidence: self.anchor_confidence,
            baseline_sim_threshold: self.baseline_sim_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub min_track_observations: u32,
    /// Association gate for sweep tracks after shift compensation.
    pub gate: PixelThreshold,
    /// Use every `subsample`-th sweep frame; 1 keeps the native rate.
    pub subsample: u32,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            min_track_observations: 2,
            gate: PixelThreshold::FrameFraction(0.08),
            subsample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    /// Insufficient-contact threshold on EP, in percent.
    pub r_p: f64,
    /// Insufficient-contact check period, seconds.
    pub n_s: f64,
    /// Imbalance check period, seconds.
    pub k_s: f64,
    /// When set, imbalance advice is suppressed for windows whose entropy is
    /// at least this fraction of `ln N`.
    pub suppress_entropy_fraction: Option<f64>,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        Self {
            r_p: 20.0,
            n_s: 30.0,
            k_s: 75.0,
            suppress_entropy_fraction: None,
        }
    }
}

impl AdvisorConfig {
    pub fn n_ms(&self) -> u64 {
        (self.n_s * 1000.0).round() as u64
    }

    pub fn k_ms(&self) -> u64 {
        (self.k_s * 1000.0).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.r_p > 0.0 && self.r_p < 100.0) {
            return Err(ConfigError::Invalid(format!("r_p must lie in (0, 100), got {}", self.r_p)));
        }
        if self.n_ms() == 0 || self.k_ms() == 0 {
            return Err(ConfigError::Invalid("advisor periods n and k must be positive".into()));
        }
        if let Some(f) = self.suppress_entropy_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::Invalid(format!(
                    "suppress_entropy_fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub nominal_frame_rate_hz: f64,
    /// Gaze/frame pairing tolerance; half the nominal frame interval if unset.
    pub pairing_tolerance_ms: Option<u64>,
    /// Snapshot push rate on the session clock.
    pub snapshot_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            nominal_frame_rate_hz: 30.0,
            pairing_tolerance_ms: None,
            snapshot_hz: 5.0,
        }
    }
}

impl SessionConfig {
    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.nominal_frame_rate_hz
    }

    pub fn pairing_tolerance_ms(&self) -> u64 {
        self.pairing_tolerance_ms
            .unwrap_or_else(|| (self.frame_interval_ms() / 2.0).floor() as u64)
    }

    pub fn snapshot_interval_ms(&self) -> u64 {
        (1000.0 / self.snapshot_hz).round() as u64
    }
}

/// Which identifier provider a session uses. Part of the log header so that
/// replays rebuild the same provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IdentifierConfig {
    /// Cosine similarity between descriptors and registered templates.
    #[default]
    Cosine,
    /// Cosine similarity lowered by a seeded per-detection penalty of at most `jitter`.
    Synthetic { seed: u64, jitter: f64 },
}


#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub identification: IdentificationConfig,
    pub registration: RegistrationConfig,
    pub advisor: AdvisorConfig,
    pub session: SessionConfig,
    pub identifier: IdentifierConfig,
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.advisor.validate()?;
        let id = &self.identification;
        for (name, v) in [
            ("anchor_confidence", id.anchor_confidence),
            ("baseline_sim_threshold", id.baseline_sim_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.registration.min_track_observations == 0 || self.registration.subsample == 0 {
            return Err(ConfigError::Invalid(
                "min_track_observations and subsample must be at least 1".into(),
            ));
        }
        if !(self.session.nominal_frame_rate_hz > 0.0 && self.session.snapshot_hz > 0.0) {
            return Err(ConfigError::Invalid("frame and snapshot rates must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_for_1280_wide_frames() {
        let p = IdentificationConfig::default().resolve(1280.0);
        assert_eq!(p.target_radius_px, 64.0);
        assert!((p.track_gate_px - 102.4).abs() < 1e-9);
        assert_eq!(p.anchor_confidence, 0.8);
        assert_eq!(SessionConfig::default().pairing_tolerance_ms(), 16);
        assert_eq!(SessionConfig::default().snapshot_interval_ms(), 200);
    }

    #[test]
    fn toml_overrides_merge_with_defaults() {
        let cfg = EngineConfig::from_toml_str(
            r#"
            [identification]
            target_radius = { px = 40.0 }
            anchor_confidence = 0.9

            [advisor]
            n_s = 10.0

            [identifier]
            kind = "synthetic"
            seed = 7
            jitter = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(cfg.identification.target_radius, PixelThreshold::Px(40.0));
        assert_eq!(cfg.identification.track_gate, PixelThreshold::FrameFraction(0.08));
        assert_eq!(cfg.advisor.n_ms(), 10_000);
        assert_eq!(cfg.advisor.k_ms(), 75_000);
        assert_eq!(cfg.identifier, IdentifierConfig::Synthetic { seed: 7, jitter: 0.05 });
    }

    #[test]
    fn rejects_out_of_range_thresholds() {
        assert!(EngineConfig::from_toml_str("[advisor]\nr_p = 100.0").is_err());
        assert!(EngineConfig::from_toml_str("[identification]\nanchor_confidence = 1.5").is_err());
        assert!(EngineConfig::from_toml_str("[registration]\nmin_track_observations = 0").is_err());
        assert!(EngineConfig::from_toml_str("[advisor]\nbogus = 1").is_err());
    }
}
