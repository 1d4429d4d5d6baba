//! Deterministic discrete-event simulation of message-passing processes.
//!
//! `n` processes exchange messages over one directed channel per ordered
//! pair. A channel carries every message kind; its [`ChannelPolicy`] decides
//! how much delivery may deviate from send order. Time is an integer tick
//! counter. All randomness (latencies) comes from a single seeded generator,
//! and every queue is ordered by explicit keys, so a `(config, seed)` pair
//! determines the event log bit for bit. That determinism is load-bearing:
//! replay verification and the offline oracle both depend on it.
//!
//! A process activation always runs in the same order: deliver everything
//! currently deliverable, then perform at most one local update, then let the
//! protocol react, then emit the buffered sends. The runner drives this loop;
//! the simulator only decides *when* messages become deliverable and in what
//! order.

mod channel;
mod log;
mod net;

pub use channel::{ChannelPolicy, DEFAULT_MAX_HOLD};
pub use log::{EventLog, EventRecord, EventType, KindTag};
pub use net::{Activation, Net, NetConfig, ReduceOp};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ProcessId = usize;

/// Latency in ticks applied to each send, drawn per message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LatencyDist {
    /// Every message takes exactly this many ticks. Must be >= 1.
    Fixed(u64),
    /// Uniform integer latency in `[lo, hi]`, `1 <= lo <= hi`.
    Uniform { lo: u64, hi: u64 },
}

impl LatencyDist {
    pub fn validate(&self) -> Result<(), NetError> {
        let ok = match self {
            LatencyDist::Fixed(k) => *k >= 1,
            LatencyDist::Uniform { lo, hi } => *lo >= 1 && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(NetError::InvalidConfig("latency must be at least one tick".into()))
        }
    }

    pub(crate) fn sample(&self, rng: &mut impl rand::Rng) -> u64 {
        match self {
            LatencyDist::Fixed(k) => *k,
            LatencyDist::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
        }
    }
}

/// Payload classes a channel can carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindClass {
    Computation,
    Marker,
    FlaggedMarker,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MessageKind {
    /// A freshly computed block, stamped with the sender's own update count.
    /// The stamp is bookkeeping for the offline verifier and for protocols
    /// whose rules are phrased in consecutive sender updates; value-carrying
    /// protocols must work from the payload alone.
    Computation { payload: Vec<f64>, sender_iter: u64 },
    /// Snapshot marker, optionally carrying the sender's recorded block.
    /// `epoch`/`attempt` tags let receivers drop stale control traffic after
    /// a restart instead of corrupting the next recording.
    Marker { epoch: u32, attempt: u32, payload: Option<Vec<f64>> },
    /// Confirmation that the sender's steadiness did (`flag`) or did not
    /// hold after it sent the matching marker.
    FlaggedMarker { epoch: u32, attempt: u32, flag: bool },
}

impl MessageKind {
    pub fn class(&self) -> KindClass {
        match self {
            MessageKind::Computation { .. } => KindClass::Computation,
            MessageKind::Marker { .. } => KindClass::Marker,
            MessageKind::FlaggedMarker { .. } => KindClass::FlaggedMarker,
        }
    }

    pub fn tag(&self) -> KindTag {
        match self {
            MessageKind::Computation { .. } => KindTag::Comp,
            MessageKind::Marker { .. } => KindTag::Marker,
            MessageKind::FlaggedMarker { .. } => KindTag::Flag,
        }
    }

    /// Wire-size proxy in bytes: fixed header plus eight bytes per payload
    /// coordinate. Used to compare control-traffic volume across protocols.
    pub fn byte_size(&self) -> u64 {
        match self {
            MessageKind::Computation { payload, .. } => 16 + 8 * payload.len() as u64,
            MessageKind::Marker { payload, .. } => {
                16 + payload.as_ref().map_or(0, |p| 8 * p.len() as u64)
            }
            MessageKind::FlaggedMarker { .. } => 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub src: ProcessId,
    pub dst: ProcessId,
    /// Per-channel send sequence number, starting at zero.
    pub seq: u64,
    pub kind: MessageKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("unknown process {0}")]
    UnknownProcess(ProcessId),
    #[error("a process has no channel to itself")]
    SelfChannel(ProcessId),
    #[error("reduction needs one contribution per process: expected {expected}, got {got}")]
    BadContributions { expected: usize, got: usize },
    #[error("reduction contribution {index} is not finite")]
    NonFiniteContribution { index: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}
