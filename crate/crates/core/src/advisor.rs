//! Eye-contact advice rules evaluated on tumbling windows of the session
//! clock.
//!
//! Two rules run independently, each on its own window length:
//! - insufficient eye contact, every `n` seconds: fires when EP < r_p;
//! - imbalanced attention, every `k` seconds: names the member with the
//!   lowest ED and points the speaker to that side of the audience.

use serde::{Deserialize, Serialize};

use crate::config::AdvisorConfig;
use crate::frame::MemberId;
use crate::identification::Classification;
use crate::metrics::{GazeDistribution, MetricsError};

pub const LOOK_AT_AUDIENCE: &str = "look at the audience";
pub const LOOK_LEFT_MORE: &str = "look left more";
pub const LOOK_RIGHT_MORE: &str = "look right more";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Members with ordinal ≤ ⌊N/2⌋ sit on the left; for odd N the middle
    /// member counts as right.
    pub fn of(member: MemberId, n_members: usize) -> Side {
        if (member.ordinal() as usize) <= n_members / 2 {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn prompt(self) -> &'static str {
        match self {
            Side::Left => LOOK_LEFT_MORE,
            Side::Right => LOOK_RIGHT_MORE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdviceKind {
    InsufficientEyeContact,
    ImbalancedAttention { side: Side, member: MemberId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdviceEvent {
    pub t: u64,
    #[serde(flatten)]
    pub kind: AdviceKind,
    pub prompt: String,
    pub window_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Insufficient,
    Imbalance,
}

/// Insufficient-contact rule on a closed window. EP = r_p does not fire.
pub fn check_insufficient(window: &GazeDistribution, r_p: f64, t: u64) -> Option<AdviceEvent> {
    if window.total == 0 {
        return None;
    }
    // EP < r_p  <=>  100·X̄ < r_p·X, evaluated without division.
    let fires = ((window.audience * 100) as f64) < r_p * window.total as f64;
    fires.then(|| AdviceEvent {
        t,
        kind: AdviceKind::InsufficientEyeContact,
        prompt: LOOK_AT_AUDIENCE.to_string(),
        window_id: window.window_id,
    })
}

/// Imbalance rule on a closed window. Silent when nobody was looked at or
/// when the audience has a single member.
pub fn check_imbalance(window: &GazeDistribution, cfg: &AdvisorConfig, t: u64) -> Option<AdviceEvent> {
    let n = window.per_member.len();
    if window.audience == 0 || n < 2 {
        return None;
    }
    if let Some(fraction) = cfg.suppress_entropy_fraction {
        match window.entropy() {
            Ok(h) if h >= fraction * (n as f64).ln() => return None,
            Ok(_) | Err(MetricsError::ZeroCounts) => {}
            Err(_) => return None,
        }
    }
    // ED shares the denominator X̄, so the minimum ED is the minimum count.
    // min_by_key keeps the first minimum, i.e. the lowest ordinal.
    let (index, _) = window.per_member.iter().enumerate().min_by_key(|&(_, c)| *c)?;
    let member = MemberId::from_index(index);
    let side = Side::of(member, n);
    Some(AdviceEvent {
        t,
        kind: AdviceKind::ImbalancedAttention { side, member },
        prompt: side.prompt().to_string(),
        window_id: window.window_id,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdvisorOutput {
    /// A window reached its boundary `t`; emitted before any advice for it.
    WindowClosed {
        rule: Rule,
        t: u64,
        window: GazeDistribution,
    },
    Advice(AdviceEvent),
}

/// Both rule windows for one session.
#[derive(Debug, Clone)]
pub struct Advisor {
    cfg: AdvisorConfig,
    n_members: usize,
    windows: Option<(GazeDistribution, GazeDistribution)>,
}

impl Advisor {
    pub fn new(cfg: AdvisorConfig, n_members: usize) -> Self {
        Self {
            cfg,
            n_members,
            windows: None,
        }
    }

    pub fn config(&self) -> &AdvisorConfig {
        &self.cfg
    }

    /// Opens the first windows at `origin`. Called implicitly by the first
    /// `tick`.
    pub fn start(&mut self, origin: u64) {
        if self.windows.is_none() {
            self.windows = Some((
                GazeDistribution::new(0, (origin, origin + self.cfg.n_ms()), self.n_members),
                GazeDistribution::new(0, (origin, origin + self.cfg.k_ms()), self.n_members),
            ));
        }
    }

    pub fn is_started(&self) -> bool {
        self.windows.is_some()
    }

    /// Open insufficient-rule window and open imbalance-rule window.
    pub fn open_windows(&self) -> Option<(&GazeDistribution, &GazeDistribution)> {
        self.windows.as_ref().map(|(a, b)| (a, b))
    }

    /// Advances the clock, closing every window whose end is ≤ `clock`. Window
    /// closings are processed in time order; at a shared boundary the
    /// insufficient rule goes first.
    pub fn tick(&mut self, clock: u64) -> Vec<AdvisorOutput> {
        self.start(clock);
        let (n_ms, k_ms) = (self.cfg.n_ms(), self.cfg.k_ms());
        let n_members = self.n_members;
        let cfg = self.cfg.clone();
        let (ins, imb) = self.windows.as_mut().expect("started");
        let mut out = Vec::new();
        loop {
            let next_ins = ins.span.1;
            let next_imb = imb.span.1;
            if next_ins.min(next_imb) > clock {
                break;
            }
            if next_ins <= next_imb {
                let next = GazeDistribution::new(ins.window_id + 1, (next_ins, next_ins + n_ms), n_members);
                let closed = std::mem::replace(ins, next);
                let advice = check_insufficient(&closed, cfg.r_p, next_ins);
                out.push(AdvisorOutput::WindowClosed {
                    rule: Rule::Insufficient,
                    t: next_ins,
                    window: closed,
                });
                out.extend(advice.map(AdvisorOutput::Advice));
            } else {
                let next = GazeDistribution::new(imb.window_id + 1, (next_imb, next_imb + k_ms), n_members);
                let closed = std::mem::replace(imb, next);
                let advice = check_imbalance(&closed, &cfg, next_imb);
                out.push(AdvisorOutput::WindowClosed {
                    rule: Rule::Imbalance,
                    t: next_imb,
                    window: closed,
                });
                out.extend(advice.map(AdvisorOutput::Advice));
            }
        }
        out
    }

    /// Counts a frame in both open windows. `tick(t)` must have run first.
    pub fn observe(&mut self, t: u64, classification: Classification) -> Result<(), MetricsError> {
        let (ins, imb) = self.windows.as_mut().ok_or(MetricsError::EmptyWindow)?;
        ins.record(t, classification)?;
        imb.record(t, classification)
    }

    pub fn observe_dropped(&mut self, t: u64) -> Result<(), MetricsError> {
        let (ins, imb) = self.windows.as_mut().ok_or(MetricsError::EmptyWindow)?;
        ins.record_dropped(t)?;
        imb.record_dropped(t)
    }
}
