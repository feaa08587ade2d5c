//! Real-time eye-contact assistance for presenters.
//!
//! The engine registers an audience from a camera sweep, identifies which
//! member the presenter looks at in each frame, keeps windowed gaze
//! statistics, and emits advice when eye contact is too low or unbalanced.

pub mod advisor;
pub mod config;
pub mod exec;
pub mod frame;
pub mod identification;
pub mod metrics;
pub mod registration;
pub mod simulator;
pub mod session;
