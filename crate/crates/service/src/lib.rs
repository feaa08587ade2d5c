//! Session service for the gazecoach engine: a single session worker, the
//! console's HTTP control and event API, live frame ingestion, and the
//! `gazecoach` command-line interface.

pub mod api;
pub mod cli;
pub mod feed;
pub mod live;
pub mod source;
pub mod worker;
