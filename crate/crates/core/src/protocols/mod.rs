//! Snapshot protocols for convergence detection.
//!
//! A detector runs next to each process and assembles one recorded entry per
//! dependency block. When every entry is defined the detector emits a
//! [`SnapshotResult`]; once all processes have emitted for the same epoch the
//! driver evaluates the recorded global state with a single reduction and
//! either stops or resets every detector for the next epoch.
//!
//! The detectors differ only in *when* an entry is recorded and *what* a
//! marker carries:
//!
//! | kind    | peer entry source              | control messages AND ordering needs    |
//! |---------|--------------------------------|----------------------------------------|
//! | cls     | receiver view at record point  | markers; FIFO; also records channels   |
//! | ais1    | receiver view at marker        | markers, cascading record; FIFO        |
//! | ais2    | receiver view at marker        | markers, no cascade; FIFO              |
//! | nfais1  | value carried by marker        | payload markers, cascade; any order    |
//! | nfais2  | value carried by marker        | payload markers, no cascade; any order |
//! | nfais3  | received update pair           | none; per-kind FIFO                    |
//! | nfais4  | receiver view at marker        | marker + confirmation flag; bounded    |
//! | nfais5  | receiver view at marker        | single marker; bounded + priority      |
//!
//! `ais1`/`ais2` record entries that are bitwise equal to the sender's own
//! record only under FIFO delivery; `nfais1`/`nfais2`/`nfais3` achieve that
//! equality under any admissible delivery; `nfais4`/`nfais5` give up equality
//! for a residual gap bounded by the channel's overtaking budget.

mod decide;
mod detectors;

pub use decide::{evaluate_and_decide, DecideError, Decision, EpochEvaluation};
pub use detectors::make_detector;

use serde::{Deserialize, Serialize};

use crate::engine::ProcessState;
use crate::simnet::{ChannelPolicy, Message, MessageKind, ProcessId};

/// Protocol selector. String forms are the lowercase names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Cls,
    Ais1,
    Ais2,
    Nfais1,
    Nfais2,
    Nfais3,
    Nfais4,
    Nfais5,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 8] = [
        ProtocolKind::Cls,
        ProtocolKind::Ais1,
        ProtocolKind::Ais2,
        ProtocolKind::Nfais1,
        ProtocolKind::Nfais2,
        ProtocolKind::Nfais3,
        ProtocolKind::Nfais4,
        ProtocolKind::Nfais5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Cls => "cls",
            ProtocolKind::Ais1 => "ais1",
            ProtocolKind::Ais2 => "ais2",
            ProtocolKind::Nfais1 => "nfais1",
            ProtocolKind::Nfais2 => "nfais2",
            ProtocolKind::Nfais3 => "nfais3",
            ProtocolKind::Nfais4 => "nfais4",
            ProtocolKind::Nfais5 => "nfais5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Whether recorded peer entries are expected to equal the owner's record
    /// bit for bit under `policy`. `cls` is excluded: its guarantee is cut
    /// consistency of state plus channel records, not entry equality.
    pub fn expects_bitwise_entries(self, policy: &ChannelPolicy) -> bool {
        match self {
            ProtocolKind::Cls => false,
            ProtocolKind::Ais1 | ProtocolKind::Ais2 => matches!(policy, ChannelPolicy::Fifo),
            ProtocolKind::Nfais1 | ProtocolKind::Nfais2 | ProtocolKind::Nfais3 => true,
            ProtocolKind::Nfais4 | ProtocolKind::Nfais5 => false,
        }
    }

    /// Whether the recorded global residual obeys the overtaking gap bound
    /// rather than exact equality.
    pub fn uses_gap_bound(self) -> bool {
        matches!(self, ProtocolKind::Nfais4 | ProtocolKind::Nfais5)
    }

    pub fn records_channels(self) -> bool {
        matches!(self, ProtocolKind::Cls)
    }

    pub fn sends_control(self) -> bool {
        !matches!(self, ProtocolKind::Nfais3)
    }

    /// Check that the protocol's correctness argument holds on channels with
    /// the given policy. `Err` explains which assumption breaks.
    pub fn check_compatibility(
        self,
        policy: &ChannelPolicy,
        control_priority: bool,
    ) -> Result<(), String> {
        match self {
            ProtocolKind::Cls | ProtocolKind::Ais1 | ProtocolKind::Ais2 => match policy {
                ChannelPolicy::Fifo => Ok(()),
                other => Err(format!(
                    "{} records the receiver's current view when a marker arrives, so a \
                     computation message passing the marker changes what gets recorded; it \
                     needs fifo channels, not {}. Use nfais1 or nfais2 on reordering channels.",
                    self.name(),
                    other.name(),
                )),
            },
            ProtocolKind::Nfais1 | ProtocolKind::Nfais2 => Ok(()),
            ProtocolKind::Nfais3 => match policy {
                ChannelPolicy::Fifo | ChannelPolicy::TypedFifo { .. } => Ok(()),
                other => Err(format!(
                    "nfais3 infers the sender's record point from consecutively received \
                     updates; computation messages must arrive in send order (fifo or \
                     typed-fifo), not {}.",
                    other.name(),
                )),
            },
            ProtocolKind::Nfais4 => match policy {
                ChannelPolicy::Fifo | ChannelPolicy::BoundedCross { .. } => Ok(()),
                other => Err(format!(
                    "nfais4's residual bound assumes each message is passed by at most eta \
                     later ones; it needs bounded-cross (or fifo), not {}.",
                    other.name(),
                )),
            },
            ProtocolKind::Nfais5 => match policy {
                ChannelPolicy::Fifo => Ok(()),
                ChannelPolicy::BoundedCross { eta, .. } => {
                    if *eta == 0 || control_priority {
                        Ok(())
                    } else {
                        Err(
                            "nfais5 omits the confirmation flag; without control priority a \
                             marker can arrive before computation messages sent earlier on the \
                             same channel and the recorded entry loses its staleness bound. \
                             Enable control priority or use nfais4."
                                .to_string(),
                        )
                    }
                }
                other => Err(format!(
                    "nfais5 needs overtaking bounded by eta (bounded-cross or fifo), not {}.",
                    other.name(),
                )),
            },
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a detector hook may touch. `state` is the engine of the same
/// process, already updated for the event being handled. Control sends are
/// pushed to `out` and flushed by the driver in push order.
pub struct Ctx<'a> {
    pub state: &'a ProcessState,
    pub time: u64,
    /// Index of the next event in the run log; used as a global order stamp
    /// for recorded entries.
    pub event_index: u64,
    pub out: &'a mut Vec<(ProcessId, MessageKind)>,
}

/// One process's completed recording for one epoch.
#[derive(Debug, Clone)]
pub struct SnapshotResult {
    pub pid: ProcessId,
    pub epoch: u32,
    /// Recorded value per block; `Some` exactly for the dependency blocks of
    /// `pid` (own block included).
    pub entries: Vec<Option<Vec<f64>>>,
    /// Event-order stamp at which each entry was recorded.
    pub recorded_at: Vec<Option<u64>>,
    pub completed_at: u64,
    /// For channel-recording protocols: per in-neighbor, the `(seq, payload)`
    /// of computation messages that arrived after the local record and before
    /// that channel's marker.
    pub channel_records: Option<Vec<Option<Vec<(u64, Vec<f64>)>>>>,
}

impl SnapshotResult {
    pub fn own_recorded_at(&self) -> u64 {
        self.recorded_at[self.pid].expect("own entry is always recorded")
    }
}

/// Common detector interface. The driver calls `on_update` after the engine
/// applied a local update, `on_message` after the engine ingested a delivered
/// message, and `poll` once per activation; `poll` yields each completed
/// snapshot exactly once.
pub trait Detector: Send {
    fn kind(&self) -> ProtocolKind;

    fn on_update(&mut self, ctx: &mut Ctx<'_>);

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>);

    fn poll(&mut self, time: u64) -> Option<SnapshotResult>;

    /// Start epoch `epoch`, discarding all recorded state. `iters_at_reset`
    /// gives every process's update count at the collective decision that
    /// triggered the reset; marker-free detectors use it to tell post-reset
    /// updates from stale in-flight ones.
    fn reset(&mut self, epoch: u32, iters_at_reset: &[u64]);
}
