//! Drive one workload, one schedule, one transport policy, and one protocol
//! to a decision, recording everything the offline verifier needs.
//!
//! A run is a pure function of its [`RunConfig`]: the simulator, the update
//! schedule, and every protocol hook draw from seeded generators, so equal
//! configurations produce bitwise-equal event logs, histories, and outcomes.
//! That is what makes the log replay in [`logio`] and the aggregate sweeps in
//! [`sweep`] trustworthy.

mod logio;
mod sweep;

pub use logio::{render_log, replay_log, replay_log_with, ReplayDivergence, ReplayError, ReplayReport};
pub use sweep::{
    run_cell, run_cells, run_cells_seq, summarize, sweep_csv_header, CellResult, CellSummary,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{neighbor_sets, ProcessState, Schedule, ScheduleState};
use crate::math::{adjusted_threshold, residual, BlockVector, MathError, NormSpec};
use crate::oracle::{EpochRecord, RunHistory, StepRecord, UpdateRecord};
use crate::protocols::{
    evaluate_and_decide, make_detector, Ctx, DecideError, Decision, Detector, ProtocolKind,
    SnapshotResult,
};
use crate::simnet::{ChannelPolicy, LatencyDist, MessageKind, Net, NetConfig, NetError};
use crate::workloads::{Workload, WorkloadConfig, WorkloadError};

/// Norm choice in configuration form. Unweighted max needs the block count
/// to materialize its weights, so the spec is built per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormConfig {
    Lp { p: f64 },
    Max,
    Weighted { weights: Vec<f64> },
}

impl NormConfig {
    pub fn to_spec(&self, n: usize) -> NormSpec {
        match self {
            NormConfig::Lp { p } => NormSpec::Lp(*p),
            NormConfig::Max => NormSpec::max_unweighted(n),
            NormConfig::Weighted { weights } => NormSpec::MaxWeighted(weights.clone()),
        }
    }
}

/// How the decision threshold (and with it the engines' steadiness
/// threshold) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// Protocols whose recorded entries are exact copies decide directly
    /// against the requested accuracy. Overtaking protocols under a weighted
    /// max norm tighten it by the staleness budget; under a p-norm they keep
    /// the requested value and the verifier reports the residual gap instead.
    #[default]
    Auto,
    /// Use this value verbatim, for experiments that deliberately mis-set it.
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workload: WorkloadConfig,
    pub protocol: ProtocolKind,
    pub policy: ChannelPolicy,
    #[serde(default)]
    pub control_priority: bool,
    pub schedule: Schedule,
    pub latency: LatencyDist,
    /// Requested accuracy of the accepted point.
    pub eps_prime: f64,
    pub norm: NormConfig,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    pub seed: u64,
    #[serde(default = "default_max_updates")]
    pub max_updates_per_process: u64,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    /// Record every update's new block value into the history. Off by
    /// default: the verifier does not need it and sweeps are lighter without.
    #[serde(default)]
    pub record_values: bool,
    /// Processes that open an epoch under the channel-recording baseline
    /// protocol; defaults to process 0.
    #[serde(default)]
    pub cls_initiators: Vec<usize>,
    /// Run a protocol on a transport its correctness argument rejects, for
    /// negative controls.
    #[serde(default)]
    pub allow_incompatible: bool,
}

fn default_max_updates() -> u64 {
    50_000
}

fn default_max_events() -> usize {
    5_000_000
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Decide(#[from] DecideError),
    #[error("protocol/transport mismatch: {0}")]
    Incompatible(String),
    #[error("invalid run configuration: {0}")]
    BadConfig(String),
}

/// A finished (or capped) run: the verifiable history plus the headline
/// quantities sweeps report.
#[derive(Debug)]
pub struct RunOutcome {
    pub history: RunHistory,
    /// Accepted point of the last converged epoch, if any.
    pub final_point: Option<BlockVector>,
    /// Exact residual of `final_point` under the run's norm, evaluated with
    /// the map of the step it was accepted for.
    pub final_residual: Option<f64>,
    /// Max over processes of the update counter at the last decision.
    pub updates_to_detect: u64,
    pub updates_total: u64,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.history.completed
    }
}

/// Decision threshold and engine steadiness threshold under `cfg`. The two
/// coincide: steadiness is what the staleness bound is phrased in, and the
/// tightened value must govern both.
fn resolve_thresholds(cfg: &RunConfig, norm: &NormSpec, eta: u32) -> Result<(f64, f64), RunError> {
    if !(cfg.eps_prime.is_finite() && cfg.eps_prime > 0.0) {
        return Err(RunError::BadConfig(format!(
            "requested accuracy must be finite and positive, got {}",
            cfg.eps_prime
        )));
    }
    let threshold = match cfg.threshold {
        ThresholdPolicy::Fixed { value } => {
            if !(value.is_finite() && value > 0.0) {
                return Err(RunError::BadConfig(format!(
                    "fixed threshold must be finite and positive, got {value}"
                )));
            }
            value
        }
        ThresholdPolicy::Auto => {
            if cfg.protocol.uses_gap_bound() {
                match norm {
                    NormSpec::MaxWeighted(w) => adjusted_threshold(cfg.eps_prime, eta, w)?,
                    NormSpec::Lp(_) => cfg.eps_prime,
                }
            } else {
                cfg.eps_prime
            }
        }
    };
    Ok((threshold, threshold))
}

/// Build the workload named by the configuration and run it.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let workload = Workload::build(&cfg.workload)?;
    run_with_workload(cfg, &workload)
}

/// Run against an already built workload (runtime-defined maps included).
pub fn run_with_workload(cfg: &RunConfig, workload: &Workload) -> Result<RunOutcome, RunError> {
    let st = workload.structure();
    let n = st.num_blocks();
    let norm = cfg.norm.to_spec(n);
    norm.validate(n)?;
    cfg.schedule.validate(n).map_err(RunError::BadConfig)?;
    if !cfg.allow_incompatible {
        cfg.protocol
            .check_compatibility(&cfg.policy, cfg.control_priority)
            .map_err(RunError::Incompatible)?;
    }
    if let Some(&bad) = cfg.cls_initiators.iter().find(|&&p| p >= n) {
        return Err(RunError::BadConfig(format!("initiator {bad} out of range for {n} processes")));
    }
    let eta = cfg.policy.eta().unwrap_or(0);
    let (threshold, eps_local) = resolve_thresholds(cfg, &norm, eta)?;

    let mut net_cfg = NetConfig::uniform(n, cfg.policy, cfg.latency.clone(), cfg.seed);
    net_cfg.control_priority = cfg.control_priority;
    let mut net = Net::new(&net_cfg)?;

    let x0 = workload.initial().clone();
    let mut map = workload.map_for_step(&x0);
    let (ins, outs) = neighbor_sets(&map);
    let mut engines: Vec<ProcessState> =
        (0..n).map(|i| ProcessState::new(i, &x0, &ins[i], eps_local)).collect();
    let initiators: Vec<usize> =
        if cfg.protocol == ProtocolKind::Cls && cfg.cls_initiators.is_empty() {
            vec![0]
        } else {
            cfg.cls_initiators.clone()
        };
    let mut detectors: Vec<Box<dyn Detector>> = (0..n)
        .map(|i| {
            make_detector(cfg.protocol, i, n, &ins[i], &outs[i], eta, initiators.contains(&i))
        })
        .collect();

    // The schedule draws from its own stream so that transport latencies and
    // activation patterns can be varied independently of each other.
    let mut sched = ScheduleState::new(cfg.schedule.clone(), n);
    let mut sched_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    for pid in 0..n {
        if let Some(t) = sched.first_slot(pid, &mut sched_rng) {
            net.schedule_update(pid, t);
        }
    }

    let mut updates: Vec<UpdateRecord> = Vec::new();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut steps: Vec<StepRecord> = vec![StepRecord { step: 0, start: x0.clone() }];
    let mut step = 0usize;
    let mut epoch = 0u32;
    let mut pending: Vec<Option<SnapshotResult>> = vec![None; n];
    let mut pending_count = 0usize;
    let mut capped = vec![false; n];
    let mut final_point: Option<BlockVector> = None;
    let mut final_residual: Option<f64> = None;
    let mut completed = false;

    'outer: while let Some(act) = net.step() {
        if net.log().len() >= cfg.max_events {
            break;
        }
        let pid = act.pid;

        // Deliveries: the engine ingests computation payloads, then the
        // detector sees every message, in arrival order. The event index is
        // the log position of the delivery itself, so record stamps interleave
        // correctly with the rest of the batch.
        let base = net.log().len() - act.delivered.len();
        for (q, msg) in act.delivered.iter().enumerate() {
            if let MessageKind::Computation { payload, sender_iter } = &msg.kind {
                engines[pid].on_computation_receive(msg.src, payload, *sender_iter);
            }
            let mut out = Vec::new();
            {
                let mut ctx = Ctx {
                    state: &engines[pid],
                    time: net.now(),
                    event_index: (base + q) as u64,
                    out: &mut out,
                };
                detectors[pid].on_message(msg, &mut ctx);
            }
            for (dst, kind) in out {
                net.send(pid, dst, kind)?;
            }
        }

        if act.update {
            if !capped[pid] && sched.fires(pid, &mut sched_rng) {
                let outcome = engines[pid].local_update(&map);
                net.log_update(pid, outcome.local_iter);
                let update_idx = net.log().len() - 1;
                updates.push(UpdateRecord {
                    time: net.now(),
                    pid,
                    local_iter: outcome.local_iter,
                    delta: outcome.delta,
                    steady_count: engines[pid].steady_count(),
                    step,
                    view_versions: engines[pid].view_versions().to_vec(),
                    value: cfg.record_values.then(|| outcome.value.clone()),
                });
                // computation messages go out before this update's own
                // control traffic; detectors rely on that order
                let mut out: Vec<(usize, MessageKind)> = outs[pid]
                    .iter()
                    .map(|&dst| {
                        (
                            dst,
                            MessageKind::Computation {
                                payload: outcome.value.clone(),
                                sender_iter: outcome.local_iter,
                            },
                        )
                    })
                    .collect();
                {
                    let mut ctx = Ctx {
                        state: &engines[pid],
                        time: net.now(),
                        event_index: update_idx as u64,
                        out: &mut out,
                    };
                    detectors[pid].on_update(&mut ctx);
                }
                for (dst, kind) in out {
                    net.send(pid, dst, kind)?;
                }
                if outcome.local_iter >= cfg.max_updates_per_process {
                    capped[pid] = true;
                }
            }
            if !capped[pid] {
                if let Some(t) = sched.next_slot(pid, net.now(), &mut sched_rng) {
                    net.schedule_update(pid, t);
                }
            }
        }

        if let Some(res) = detectors[pid].poll(net.now()) {
            debug_assert_eq!(res.epoch, epoch, "detector returned a stale epoch");
            let owner = res.pid;
            if res.epoch == epoch && pending[owner].is_none() {
                net.log_snapshot(pid, res.epoch);
                pending[owner] = Some(res);
                pending_count += 1;
            }
        }

        if pending_count == n {
            let results: Vec<SnapshotResult> =
                pending.iter_mut().map(|s| s.take().expect("counted result")).collect();
            pending_count = 0;
            let evaluation = evaluate_and_decide(&mut net, &map, &results, &norm, threshold)?;
            let decision = evaluation.decision;
            let iters: Vec<u64> = engines.iter().map(|e| e.local_iter()).collect();
            let accepted = (decision == Decision::Converged).then(|| {
                let mut x = BlockVector::zeros(st);
                for (i, r) in results.iter().enumerate() {
                    x.set_block(i, r.entries[i].clone().expect("own entry is always recorded"));
                }
                x
            });
            epochs.push(EpochRecord {
                epoch,
                step,
                decided_at: net.now(),
                results,
                evaluation,
                iters_at_decision: iters.clone(),
            });
            epoch += 1;
            match decision {
                Decision::Continue => {
                    for d in detectors.iter_mut() {
                        d.reset(epoch, &iters);
                    }
                }
                Decision::Converged => {
                    let x = accepted.expect("converged decision carries the accepted point");
                    final_residual = Some(residual(&map, &x, &norm)?);
                    final_point = Some(x.clone());
                    step += 1;
                    if step >= workload.time_steps() {
                        completed = true;
                        break 'outer;
                    }
                    // next outer system: rebase every view on the accepted
                    // point; in-flight traffic from the finished step is
                    // stale but harmless, exactly like any other delay
                    map = workload.map_for_step(&x);
                    for e in engines.iter_mut() {
                        e.reinitialize_view(&x);
                    }
                    steps.push(StepRecord { step, start: x });
                    for d in detectors.iter_mut() {
                        d.reset(epoch, &iters);
                    }
                }
            }
        }
    }

    let updates_total = updates.len() as u64;
    let updates_to_detect = epochs
        .last()
        .map(|e| e.iters_at_decision.iter().copied().max().unwrap_or(0))
        .unwrap_or(0);
    let history = RunHistory {
        n,
        protocol: cfg.protocol,
        policy: cfg.policy,
        control_priority: cfg.control_priority,
        eta,
        eps_local,
        eps_prime: cfg.eps_prime,
        threshold,
        norm,
        updates,
        epochs,
        steps,
        events: net.log().clone(),
        reduction_count: net.reduction_count(),
        control_msgs: net.control_msgs(),
        control_bytes: net.control_bytes(),
        sent: net.sent(),
        delivered: net.delivered(),
        completed,
    };
    Ok(RunOutcome { history, final_point, final_residual, updates_to_detect, updates_total })
}
