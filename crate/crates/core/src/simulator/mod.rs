//! Deterministic synthetic sessions with ground truth, used for testing and
//! benchmarking without camera hardware.

mod render;
mod scenario;
mod score;
mod synthetic;

pub use render::{
    base_vectors, generate_session, generate_sweep, truth_layout, FrameTruth, GroundTruth, SimulatedSession,
    GAZE_RATE_HZ,
};
pub use scenario::*;
pub use score::*;
pub use synthetic::{build_identifier, SyntheticIdentifier};
