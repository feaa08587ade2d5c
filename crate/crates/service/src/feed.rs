//! Messages pushed to console subscribers.
//!
//! Every message is one JSON object with `schema` and `type`:
//!
//! - `snapshot`: a full [`SessionSnapshot`]; self-contained, so a client that
//!   reconnects only needs the latest one.
//! - `advice`: an advice event plus `speak`, false while muted.
//! - `phase`: a phase transition as written to the session log, including
//!   the ordered audience layout once the map is built.
//! - `error`: a frame the session rejected.

use gazecoach_core::advisor::AdviceEvent;
use gazecoach_core::session::{PhaseRecord, SessionSnapshot};
use serde::{Deserialize, Serialize};

pub const FEED_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedMessage {
    pub schema: u32,
    #[serde(flatten)]
    pub body: FeedBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedBody {
    Snapshot(SessionSnapshot),
    Advice {
        #[serde(flatten)]
        event: AdviceEvent,
        speak: bool,
    },
    Phase(PhaseRecord),
    Error {
        t: u64,
        frame_id: u64,
        message: String,
    },
}

impl FeedMessage {
    pub fn new(body: FeedBody) -> Self {
        Self {
            schema: FEED_SCHEMA,
            body,
        }
    }

    /// Name used as the SSE event name.
    pub fn kind(&self) -> &'static str {
        match self.body {
            FeedBody::Snapshot(_) => "snapshot",
            FeedBody::Advice { .. } => "advice",
            FeedBody::Phase(_) => "phase",
            FeedBody::Error { .. } => "error",
        }
    }
}
