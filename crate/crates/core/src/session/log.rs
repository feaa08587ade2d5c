//! Session log: newline-delimited JSON, one record per line.
//!
//! Every record carries `type`, `t` (session milliseconds) and `phase`. Times
//! are non-decreasing down the file; records sharing a `t` keep their write
//! order. Field names and units:
//!
//! | type        | fields |
//! |-------------|--------|
//! | `header`    | `schema`, `source`, `config` (full engine config), `layout` (optional inline audience layout) |
//! | `phase`     | `command`, `muted`, `layout` (set when the audience map is built) |
//! | `frame`     | `frame_id`, `frame_size` [w, h] px, `gaze` {`t`, `point` [x, y] px, `valid`}, `detections` [{`box` [x0, y0, x1, y1], `center`, `confidence`, `descriptor`}] |
//! | `dropped`   | `frame_id` of a frame missing from the source, `t` interpolated |
//! | `attention` | `frame_id`, `classification` {`kind`, `member`}, `identifier_invoked`, `anchor_after` {`status`, ...}, `assignments` |
//! | `metrics`   | `rule`, `window_id`, `span` [start, end) ms, `total`, `audience`, `per_member`, `unidentified`, `ep`, `ed`, `gde` (percent / nats, `null` when undefined) |
//! | `advice`    | `kind`, `side`, `member`, `prompt`, `window_id` |

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::control::{ControlCommand, Phase};
use crate::advisor::{AdviceEvent, Rule};
use crate::config::EngineConfig;
use crate::frame::FrameObservation;
use crate::identification::FrameAttention;
use crate::metrics::GazeDistribution;
use crate::registration::AudienceLayout;

pub const LOG_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: t = {t} ms precedes the previous record at {last} ms")]
    OutOfOrder { line: usize, t: u64, last: u64 },
    #[error("line {line}: unsupported log schema {schema}")]
    Schema { line: usize, schema: u32 },
    #[error("log has no {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub t: u64,
    pub phase: Phase,
    pub schema: u32,
    /// Where frames came from: `sim:<scenario>`, `log:<path>`, `live:<addr>`.
    pub source: String,
    pub config: EngineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<AudienceLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub t: u64,
    pub phase: Phase,
    pub command: ControlCommand,
    pub muted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<AudienceLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub phase: Phase,
    #[serde(flatten)]
    pub frame: FrameObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub t: u64,
    pub phase: Phase,
    pub frame_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub t: u64,
    pub phase: Phase,
    #[serde(flatten)]
    pub attention: FrameAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub phase: Phase,
    pub rule: Rule,
    #[serde(flatten)]
    pub window: GazeDistribution,
    pub ep: Option<f64>,
    pub ed: Option<Vec<f64>>,
    pub gde: Option<f64>,
}

impl MetricsRecord {
    pub fn closed(t: u64, phase: Phase, rule: Rule, window: GazeDistribution) -> Self {
        Self {
            t,
            phase,
            rule,
            ep: window.eye_contact_proportion().ok(),
            ed: window.distribution().ok(),
            gde: window.entropy().ok(),
            window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceRecord {
    pub phase: Phase,
    #[serde(flatten)]
    pub event: AdviceEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(HeaderRecord),
    Phase(PhaseRecord),
    Frame(FrameRecord),
    Dropped(DroppedRecord),
    Attention(AttentionRecord),
    Metrics(MetricsRecord),
    Advice(AdviceRecord),
}

impl LogRecord {
    pub fn t(&self) -> u64 {
        match self {
            LogRecord::Header(r) => r.t,
            LogRecord::Phase(r) => r.t,
            LogRecord::Frame(r) => r.frame.t,
            LogRecord::Dropped(r) => r.t,
            LogRecord::Attention(r) => r.t,
            LogRecord::Metrics(r) => r.t,
            LogRecord::Advice(r) => r.event.t,
        }
    }

    pub fn phase(&self) -> Phase {
        match self {
            LogRecord::Header(r) => r.phase,
            LogRecord::Phase(r) => r.phase,
            LogRecord::Frame(r) => r.phase,
            LogRecord::Dropped(r) => r.phase,
            LogRecord::Attention(r) => r.phase,
            LogRecord::Metrics(r) => r.phase,
            LogRecord::Advice(r) => r.phase,
        }
    }

    /// Records computed by the engine rather than read from the source.
    pub fn is_derived(&self) -> bool {
        matches!(
            self,
            LogRecord::Dropped(_) | LogRecord::Attention(_) | LogRecord::Metrics(_) | LogRecord::Advice(_)
        )
    }

    /// The record as one log line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }
}

/// Appends records to a writer, refusing any that would go back in time.
pub struct LogWriter<W: Write> {
    out: W,
    last_t: Option<u64>,
    lines: usize,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            last_t: None,
            lines: 0,
        }
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let t = record.t();
        if let Some(last) = self.last_t.filter(|&last| t < last) {
            return Err(LogError::OutOfOrder {
                line: self.lines + 1,
                t,
                last,
            });
        }
        writeln!(self.out, "{}", record.to_line())?;
        self.last_t = Some(t);
        self.lines += 1;
        Ok(())
    }

    pub fn append_all<'a>(&mut self, records: impl IntoIterator<Item = &'a LogRecord>) -> Result<(), LogError> {
        records.into_iter().try_for_each(|r| self.append(r))
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// An in-memory session log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn read(input: impl BufRead) -> Result<Self, LogError> {
        let mut records = Vec::new();
        let mut last_t = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord =
                serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            if let LogRecord::Header(h) = &record {
                if h.schema != LOG_SCHEMA {
                    return Err(LogError::Schema {
                        line: i + 1,
                        schema: h.schema,
                    });
                }
            }
            if record.t() < last_t {
                return Err(LogError::OutOfOrder {
                    line: i + 1,
                    t: record.t(),
                    last: last_t,
                });
            }
            last_t = record.t();
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, LogError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn to_ndjson(&self) -> String {
        let mut w = LogWriter::new(Vec::new());
        w.append_all(&self.records).expect("in-memory log stays ordered");
        String::from_utf8(w.into_inner()).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), LogError> {
        std::fs::write(path, self.to_ndjson())?;
        Ok(())
    }

    pub fn header(&self) -> Option<&HeaderRecord> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Header(h) => Some(h),
            _ => None,
        })
    }

    /// Audience layout in effect for the presentation: the one inline in the
    /// header, else the one recorded when the audience map was built.
    pub fn layout(&self) -> Option<&AudienceLayout> {
        self.header().and_then(|h| h.layout.as_ref()).or_else(|| {
            self.records.iter().rev().find_map(|r| match r {
                LogRecord::Phase(p) => p.layout.as_ref(),
                _ => None,
            })
        })
    }

    /// Frame records captured in `phase`, in log order.
    pub fn frames(&self, phase: Phase) -> impl Iterator<Item = &FrameObservation> {
        self.records.iter().filter_map(move |r| match r {
            LogRecord::Frame(f) if f.phase == phase => Some(&f.frame),
            _ => None,
        })
    }

    /// Every frame record regardless of phase.
    pub fn all_frames(&self) -> impl Iterator<Item = &FrameObservation> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Frame(f) => Some(&f.frame),
            _ => None,
        })
    }

    /// Time of the first entry into `phase`.
    pub fn phase_start(&self, phase: Phase) -> Option<u64> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Phase(p) if p.phase == phase => Some(p.t),
            _ => None,
        })
    }

    pub fn attention(&self) -> impl Iterator<Item = &AttentionRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Attention(a) => Some(a),
            _ => None,
        })
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Metrics(m) => Some(m),
            _ => None,
        })
    }

    pub fn advice(&self) -> impl Iterator<Item = &AdviceEvent> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Advice(a) => Some(&a.event),
            _ => None,
        })
    }

    /// Derived records serialized one per line, the unit of replay comparison.
    pub fn derived_lines(&self) -> Vec<String> {
        self.records.iter().filter(|r| r.is_derived()).map(LogRecord::to_line).collect()
    }
}

/// Per-window metrics as CSV: one row per closed window and rule.
pub fn metrics_csv(log: &SessionLog) -> String {
    #[derive(Serialize)]
    struct Row {
        rule: Rule,
        window_id: u64,
        start_ms: u64,
        end_ms: u64,
        frames: u64,
        audience_frames: u64,
        unidentified_frames: u64,
        ep: Option<f64>,
        gde: Option<f64>,
        ed: String,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in log.metrics() {
        let ed = m
            .ed
            .as_ref()
            .map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.serialize(Row {
            rule: m.rule,
            window_id: m.window.window_id,
            start_ms: m.window.span.0,
            end_ms: m.window.span.1,
            frames: m.window.total,
            audience_frames: m.window.audience,
            unidentified_frames: m.window.unidentified,
            ep: m.ep,
            gde: m.gde,
            ed,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}
