//! Everything the offline verifier needs to re-derive a run's claims.
//!
//! The driver appends to a [`RunHistory`] while the simulation executes and
//! never reads it back, so recording cannot perturb the run. All event-order
//! stamps (`recorded_at`, send and delivery positions) are indices into the
//! shared event log.

use crate::math::{BlockVector, NormSpec};
use crate::protocols::{EpochEvaluation, ProtocolKind, SnapshotResult};
use crate::simnet::{ChannelPolicy, EventLog};

/// One local update, as seen by the process that performed it.
#[derive(Debug, Clone)]
pub struct UpdateRecord {
    pub time: u64,
    pub pid: usize,
    /// Update counter after this update; the first update reports 1.
    pub local_iter: u64,
    /// Max-abs change of the own block.
    pub delta: f64,
    /// Consecutive-steady counter after this update.
    pub steady_count: u64,
    /// Outer system index the update ran under.
    pub step: usize,
    /// Version stamps of the view right after the update: the own entry
    /// equals `local_iter`, entry `j` is the sender iteration of the value
    /// of block `j` the update consumed.
    pub view_versions: Vec<u64>,
    /// New own-block value; kept only when the driver records values.
    pub value: Option<Vec<f64>>,
}

/// One completed detection epoch: every snapshot result plus the decision.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Outer system index the epoch ran under.
    pub step: usize,
    /// Simulation time of the decision.
    pub decided_at: u64,
    /// Per-process snapshot results, indexed by pid.
    pub results: Vec<SnapshotResult>,
    pub evaluation: EpochEvaluation,
    /// Each process's update counter at the decision.
    pub iters_at_decision: Vec<u64>,
}

/// One outer system solve.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    /// Iterate the step starts from: the workload's initial point for step
    /// 0, the accepted solution of the previous step otherwise.
    pub start: BlockVector,
}

/// Complete trace of one run. A pure function of the run configuration and
/// seed; the verifier consumes it together with the workload that produced
/// the maps.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub n: usize,
    pub protocol: ProtocolKind,
    pub policy: ChannelPolicy,
    pub control_priority: bool,
    /// Staleness budget the run was configured with; 0 outside the
    /// overtaking protocols.
    pub eta: u32,
    /// Steadiness threshold the engines compared update deltas against.
    pub eps_local: f64,
    /// Accuracy the caller asked for.
    pub eps_prime: f64,
    /// Decision threshold the reduced residual was compared against.
    pub threshold: f64,
    pub norm: NormSpec,
    pub updates: Vec<UpdateRecord>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub events: EventLog,
    pub reduction_count: u64,
    pub control_msgs: u64,
    pub control_bytes: u64,
    pub sent: u64,
    pub delivered: u64,
    /// Whether every outer step reached a converged decision within the
    /// configured caps.
    pub completed: bool,
}

/// One row of a process's realized-delay table.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRow {
    pub time: u64,
    pub local_iter: u64,
    /// `versions[j]` is the iteration of process `j` whose value this update
    /// consumed; the own entry equals `local_iter`.
    pub versions: Vec<u64>,
}

/// Realized delays of one process, one row per update.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    pub pid: usize,
    pub rows: Vec<DelayRow>,
}

/// Group the recorded updates into per-process delay tables, preserving the
/// global activation order within each process.
pub fn extract_delays(h: &RunHistory) -> Vec<DelayTable> {
    let mut tables: Vec<DelayTable> = (0..h.n).map(|pid| DelayTable { pid, rows: Vec::new() }).collect();
    for u in &h.updates {
        tables[u.pid].rows.push(DelayRow {
            time: u.time,
            local_iter: u.local_iter,
            versions: u.view_versions.clone(),
        });
    }
    tables
}
