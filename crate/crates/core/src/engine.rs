//! Per-process iteration state.
//!
//! Each process owns one block of the iterate and keeps a local view of the
//! full vector, refreshed by computation messages from its in-neighbors. The
//! view is the only input to a local update, so staleness lives entirely in
//! `view_versions`: entry `j` is the sender iteration of the last value
//! received from `j` (own entry tracks `local_iter`).
//!
//! The engine knows nothing about snapshots. Detectors read it through
//! accessors and never mutate it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{sub_max_abs, BlockVector, FixedPointMap};
use crate::simnet::ProcessId;

/// State queried before the first local update has happened.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("process {0} has not performed a local update yet")]
    NotReady(ProcessId),
}

/// Last two values received from one in-neighbor, oldest first. Seeded with
/// the shared initial block at sender iteration 0 so the very first received
/// update already forms a pair.
#[derive(Debug, Clone)]
pub struct PairBuf {
    prev: Option<(Vec<f64>, u64)>,
    latest: (Vec<f64>, u64),
}

impl PairBuf {
    fn new(initial: Vec<f64>) -> Self {
        PairBuf { prev: None, latest: (initial, 0) }
    }

    fn push(&mut self, value: Vec<f64>, sender_iter: u64) {
        self.prev = Some(std::mem::replace(&mut self.latest, (value, sender_iter)));
    }

    /// Oldest-first pair `((value, iter), (value, iter))`, once two entries exist.
    pub fn pair(&self) -> Option<(&(Vec<f64>, u64), &(Vec<f64>, u64))> {
        self.prev.as_ref().map(|p| (p, &self.latest))
    }

    pub fn latest(&self) -> &(Vec<f64>, u64) {
        &self.latest
    }
}

/// Outcome of one local update, echoed to the caller so it can emit the
/// computation messages.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub value: Vec<f64>,
    pub delta: f64,
    pub local_iter: u64,
}

#[derive(Debug, Clone)]
pub struct ProcessState {
    id: ProcessId,
    eps: f64,
    local_view: BlockVector,
    view_versions: Vec<u64>,
    local_iter: u64,
    last_update_delta: Option<f64>,
    steady_count: u64,
    received: Vec<Option<PairBuf>>,
}

impl ProcessState {
    /// `eps` is the local steadiness threshold; comparisons against it are
    /// strict everywhere.
    pub fn new(id: ProcessId, x0: &BlockVector, in_neighbors: &[usize], eps: f64) -> Self {
        let n = x0.structure().num_blocks();
        assert!(id < n, "process id out of range");
        assert!(eps > 0.0 && eps.is_finite(), "eps must be positive and finite");
        let mut received = vec![None; n];
        for &j in in_neighbors {
            assert!(j < n && j != id, "bad in-neighbor {j} for process {id}");
            received[j] = Some(PairBuf::new(x0.block(j).to_vec()));
        }
        ProcessState {
            id,
            eps,
            local_view: x0.clone(),
            view_versions: vec![0; n],
            local_iter: 0,
            last_update_delta: None,
            steady_count: 0,
            received,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn local_iter(&self) -> u64 {
        self.local_iter
    }

    pub fn steady_count(&self) -> u64 {
        self.steady_count
    }

    pub fn last_update_delta(&self) -> Option<f64> {
        self.last_update_delta
    }

    pub fn view(&self) -> &BlockVector {
        &self.local_view
    }

    pub fn view_block(&self, j: usize) -> &[f64] {
        self.local_view.block(j)
    }

    pub fn own_block(&self) -> &[f64] {
        self.local_view.block(self.id)
    }

    /// Sender iteration of the view entry for each block; own entry tracks
    /// `local_iter`.
    pub fn view_versions(&self) -> &[u64] {
        &self.view_versions
    }

    /// Pair buffer for in-neighbor `j`, if `j` is one.
    pub fn received_pair(&self, j: usize) -> Option<&PairBuf> {
        self.received[j].as_ref()
    }

    /// Whether the last local update moved the own block by less than `eps`.
    /// Undefined until the first update.
    pub fn local_converged(&self) -> Result<bool, EngineError> {
        match self.last_update_delta {
            None => Err(EngineError::NotReady(self.id)),
            Some(d) => Ok(d < self.eps),
        }
    }

    /// Convenience form used by detectors: `false` before the first update.
    pub fn is_locally_converged(&self) -> bool {
        self.local_converged().unwrap_or(false)
    }

    /// Apply one update of the own block against the current view.
    pub fn local_update(&mut self, f: &dyn FixedPointMap) -> UpdateOutcome {
        let new = f.eval_block(self.id, &self.local_view);
        let delta = sub_max_abs(&new, self.own_block());
        self.local_iter += 1;
        self.view_versions[self.id] = self.local_iter;
        self.last_update_delta = Some(delta);
        if delta < self.eps {
            self.steady_count += 1;
        } else {
            self.steady_count = 0;
        }
        self.local_view.set_block(self.id, new.clone());
        UpdateOutcome { value: new, delta, local_iter: self.local_iter }
    }

    /// Install a received value from in-neighbor `src` into the view and the
    /// pair buffer. Reordered transports can deliver an older iterate after a
    /// newer one; the view keeps the newest version per sender, so consumed
    /// versions never regress. The pair buffer still records arrival order
    /// (it is only consulted on in-order transports).
    pub fn on_computation_receive(&mut self, src: ProcessId, payload: &[f64], sender_iter: u64) {
        let buf = self.received[src]
            .as_mut()
            .unwrap_or_else(|| panic!("process {} received from non-neighbor {}", self.id, src));
        buf.push(payload.to_vec(), sender_iter);
        if sender_iter >= self.view_versions[src] {
            self.local_view.set_block(src, payload.to_vec());
            self.view_versions[src] = sender_iter;
        }
    }

    /// Reset the view to a new consistent starting point, keeping `local_iter`
    /// monotone. Used when a run moves to the next outer system.
    pub fn reinitialize_view(&mut self, x0: &BlockVector) {
        assert!(x0.matches(&self.local_view.structure()));
        self.local_view = x0.clone();
        for (j, slot) in self.received.iter_mut().enumerate() {
            if let Some(buf) = slot {
                buf.push(x0.block(j).to_vec(), buf.latest().1);
            }
        }
        self.last_update_delta = None;
        self.steady_count = 0;
    }
}

/// In-neighbors (`deps(i) \ {i}`) and out-neighbors (`{j : i in deps(j)}`)
/// for every process, both sorted.
pub fn neighbor_sets(f: &dyn FixedPointMap) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = f.structure().num_blocks();
    let mut ins = vec![Vec::new(); n];
    let mut outs = vec![Vec::new(); n];
    for i in 0..n {
        for &j in f.dependency(i) {
            if j != i {
                ins[i].push(j);
                outs[j].push(i);
            }
        }
    }
    for v in ins.iter_mut().chain(outs.iter_mut()) {
        v.sort_unstable();
        v.dedup();
    }
    (ins, outs)
}

/// Gap between consecutive activations of one process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntervalDist {
    Fixed(u64),
    /// Inclusive bounds.
    Uniform { lo: u64, hi: u64 },
}

impl IntervalDist {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            IntervalDist::Fixed(t) if t == 0 => Err("interval must be at least 1".into()),
            IntervalDist::Uniform { lo, hi } if lo == 0 || hi < lo => {
                Err(format!("bad interval range [{lo}, {hi}]"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            IntervalDist::Fixed(t) => t,
            IntervalDist::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }
}

/// Which processes update, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// Every process updates at every one of its slots. With a fixed interval
    /// and unit latency this reproduces the synchronous iteration.
    RoundRobin,
    /// Each slot fires with probability `prob`; a process that has skipped
    /// `max_skip` consecutive slots fires unconditionally, so no process
    /// starves.
    RandomSubset { prob: f64, max_skip: u32 },
    /// Scripted activation times per process, in ticks. Once a script is
    /// exhausted that process stops updating.
    Scripted { times: Vec<Vec<u64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub interval: IntervalDist,
}

impl Schedule {
    pub fn round_robin(interval: IntervalDist) -> Self {
        Schedule { kind: ScheduleKind::RoundRobin, interval }
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        self.interval.validate()?;
        match &self.kind {
            ScheduleKind::RandomSubset { prob, .. } => {
                if !(*prob > 0.0 && *prob <= 1.0) {
                    return Err(format!("subset probability {prob} outside (0, 1]"));
                }
                Ok(())
            }
            ScheduleKind::Scripted { times } => {
                if times.len() != n {
                    return Err(format!("script covers {} processes, run has {n}", times.len()));
                }
                for (pid, seq) in times.iter().enumerate() {
                    if seq.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(format!("script for process {pid} is not strictly increasing"));
                    }
                }
                Ok(())
            }
            ScheduleKind::RoundRobin => Ok(()),
        }
    }
}

/// Driver-side schedule state: decides, per process, the time of its next
/// update slot and whether a slot actually fires.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    schedule: Schedule,
    skips: Vec<u32>,
    script_pos: Vec<usize>,
}

impl ScheduleState {
    pub fn new(schedule: Schedule, n: usize) -> Self {
        ScheduleState { schedule, skips: vec![0; n], script_pos: vec![0; n] }
    }

    /// First slot for `pid`. `None` for an empty script.
    pub fn first_slot(&mut self, pid: ProcessId, rng: &mut ChaCha8Rng) -> Option<u64> {
        match &self.schedule.kind {
            ScheduleKind::Scripted { times } => {
                let t = times[pid].first().copied();
                self.script_pos[pid] = 1;
                t
            }
            _ => Some(self.schedule.interval.sample(rng)),
        }
    }

    /// Slot after an activation of `pid` at `now`. `None` once a script ends.
    pub fn next_slot(&mut self, pid: ProcessId, now: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
        match &self.schedule.kind {
            ScheduleKind::Scripted { times } => {
                let t = times[pid].get(self.script_pos[pid]).copied();
                self.script_pos[pid] += 1;
                t
            }
            _ => Some(now + self.schedule.interval.sample(rng)),
        }
    }

    /// Whether the slot fires as an update. Skipped slots still reschedule.
    pub fn fires(&mut self, pid: ProcessId, rng: &mut ChaCha8Rng) -> bool {
        match &self.schedule.kind {
            ScheduleKind::RandomSubset { prob, max_skip } => {
                if self.skips[pid] >= *max_skip || rng.gen_bool(*prob) {
                    self.skips[pid] = 0;
                    true
                } else {
                    self.skips[pid] += 1;
                    false
                }
            }
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{BlockStructure, BlockVector, LinearMap, SparseBlockMatrix};
    use rand::SeedableRng;

    fn scalar_map(entries: &[(usize, usize, f64)], offset: &[f64]) -> LinearMap {
        let n = offset.len();
        let s = BlockStructure::uniform(n, 1);
        let m = SparseBlockMatrix::from_triplets(s.clone(), entries);
        let c = BlockVector::new(offset.iter().map(|&v| vec![v]).collect());
        LinearMap::new(m, c)
    }

    fn zeros(n: usize) -> BlockVector {
        BlockVector::zeros(&BlockStructure::uniform(n, 1))
    }

    #[test]
    fn identity_map_first_update_is_steady_with_zero_delta() {
        let f = scalar_map(&[(0, 0, 1.0), (1, 1, 1.0)], &[0.0, 0.0]);
        let mut p = ProcessState::new(0, &zeros(2), &[], 1e-6);
        assert!(matches!(p.local_converged(), Err(EngineError::NotReady(0))));
        let out = p.local_update(&f);
        assert_eq!(out.delta, 0.0);
        assert_eq!(out.local_iter, 1);
        assert_eq!(p.steady_count(), 1);
        assert_eq!(p.local_converged(), Ok(true));
    }

    #[test]
    fn affine_map_delta_matches_step_size() {
        // f(x) = 0.5 x + 1 from 0: first update lands at 1, delta 1.
        let f = scalar_map(&[(0, 0, 0.5)], &[1.0]);
        let mut p = ProcessState::new(0, &zeros(1), &[], 1e-6);
        let out = p.local_update(&f);
        assert_eq!(out.value, vec![1.0]);
        assert_eq!(out.delta, 1.0);
        assert_eq!(p.steady_count(), 0);
        assert_eq!(p.local_converged(), Ok(false));
    }

    #[test]
    fn steadiness_is_strict_at_the_threshold() {
        // f(x) = x + 0.5: every update moves by exactly 0.5.
        let f = scalar_map(&[(0, 0, 1.0)], &[0.5]);
        let mut p = ProcessState::new(0, &zeros(1), &[], 0.5);
        p.local_update(&f);
        assert_eq!(p.last_update_delta(), Some(0.5));
        assert_eq!(p.local_converged(), Ok(false));
        assert_eq!(p.steady_count(), 0);
    }

    #[test]
    fn steady_count_resets_on_a_large_step() {
        let f_small = scalar_map(&[(0, 0, 1.0)], &[1e-8]);
        let f_big = scalar_map(&[(0, 0, 1.0)], &[1.0]);
        let mut p = ProcessState::new(0, &zeros(1), &[], 1e-6);
        p.local_update(&f_small);
        p.local_update(&f_small);
        assert_eq!(p.steady_count(), 2);
        p.local_update(&f_big);
        assert_eq!(p.steady_count(), 0);
        p.local_update(&f_small);
        assert_eq!(p.steady_count(), 1);
    }

    #[test]
    fn receive_updates_view_versions_and_pairs() {
        let x0 = zeros(3);
        let mut p = ProcessState::new(1, &x0, &[0, 2], 1e-6);
        // Seeded pair buffers expose the initial value at sender iteration 0.
        assert_eq!(p.received_pair(0).unwrap().latest(), &(vec![0.0], 0));
        assert!(p.received_pair(0).unwrap().pair().is_none());

        p.on_computation_receive(0, &[2.5], 1);
        assert_eq!(p.view_block(0), &[2.5]);
        assert_eq!(p.view_versions(), &[1, 0, 0]);
        let (prev, latest) = p.received_pair(0).unwrap().pair().unwrap();
        assert_eq!(prev, &(vec![0.0], 0));
        assert_eq!(latest, &(vec![2.5], 1));

        p.on_computation_receive(0, &[2.75], 2);
        let (prev, latest) = p.received_pair(0).unwrap().pair().unwrap();
        assert_eq!(prev, &(vec![2.5], 1));
        assert_eq!(latest, &(vec![2.75], 2));
    }

    #[test]
    fn stale_arrival_does_not_regress_the_view() {
        let mut p = ProcessState::new(1, &zeros(3), &[0], 1e-6);
        p.on_computation_receive(0, &[3.0], 4);
        // A reordered channel delivers iteration 2 after iteration 4: the
        // view must keep the newer value, the pair buffer logs the arrival.
        p.on_computation_receive(0, &[1.0], 2);
        assert_eq!(p.view_block(0), &[3.0]);
        assert_eq!(p.view_versions(), &[4, 0, 0]);
        let (prev, latest) = p.received_pair(0).unwrap().pair().unwrap();
        assert_eq!(prev, &(vec![3.0], 4));
        assert_eq!(latest, &(vec![1.0], 2));

        p.on_computation_receive(0, &[5.0], 5);
        assert_eq!(p.view_block(0), &[5.0]);
        assert_eq!(p.view_versions(), &[5, 0, 0]);
    }

    #[test]
    #[should_panic(expected = "non-neighbor")]
    fn receive_from_non_neighbor_panics() {
        let mut p = ProcessState::new(1, &zeros(3), &[0], 1e-6);
        p.on_computation_receive(2, &[1.0], 1);
    }

    #[test]
    fn neighbor_sets_follow_dependency_sparsity() {
        // Ring: block i depends on i-1 and i.
        let f = scalar_map(
            &[(0, 0, 0.4), (0, 2, 0.1), (1, 0, 0.1), (1, 1, 0.4), (2, 1, 0.1), (2, 2, 0.4)],
            &[0.0, 0.0, 0.0],
        );
        let (ins, outs) = neighbor_sets(&f);
        assert_eq!(ins, vec![vec![2], vec![0], vec![1]]);
        assert_eq!(outs, vec![vec![1], vec![2], vec![0]]);
    }

    #[test]
    fn reinitialize_keeps_iteration_monotone_and_reseeds_pairs() {
        let f = scalar_map(&[(0, 0, 0.5), (0, 1, 0.1), (1, 1, 0.5)], &[1.0, 1.0]);
        let mut p = ProcessState::new(0, &zeros(2), &[1], 1e-6);
        p.local_update(&f);
        p.on_computation_receive(1, &[3.0], 4);
        let s = BlockStructure::uniform(2, 1);
        let x1 = BlockVector::new(vec![vec![7.0], vec![8.0]]);
        assert!(x1.matches(&s));
        p.reinitialize_view(&x1);
        assert_eq!(p.view_block(0), &[7.0]);
        assert_eq!(p.view_block(1), &[8.0]);
        assert_eq!(p.local_iter(), 1);
        assert_eq!(p.steady_count(), 0);
        assert!(matches!(p.local_converged(), Err(_)));
        // The reseeded pair keeps the old sender iteration so stale messages
        // remain distinguishable.
        assert_eq!(p.received_pair(1).unwrap().latest(), &(vec![8.0], 4));
    }

    #[test]
    fn round_robin_fixed_interval_is_lockstep() {
        let mut st = ScheduleState::new(Schedule::round_robin(IntervalDist::Fixed(5)), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pid in 0..3 {
            assert_eq!(st.first_slot(pid, &mut rng), Some(5));
            assert!(st.fires(pid, &mut rng));
        }
        assert_eq!(st.next_slot(1, 5, &mut rng), Some(10));
    }

    #[test]
    fn random_subset_never_starves() {
        let sched = Schedule {
            kind: ScheduleKind::RandomSubset { prob: 0.05, max_skip: 4 },
            interval: IntervalDist::Fixed(1),
        };
        let mut st = ScheduleState::new(sched, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gap = 0u32;
        let mut longest = 0u32;
        for _ in 0..10_000 {
            if st.fires(0, &mut rng) {
                longest = longest.max(gap);
                gap = 0;
            } else {
                gap += 1;
            }
        }
        assert!(longest <= 4, "a process skipped {longest} consecutive slots");
    }

    #[test]
    fn scripted_schedule_replays_and_ends() {
        let sched = Schedule {
            kind: ScheduleKind::Scripted { times: vec![vec![2, 7], vec![3]] },
            interval: IntervalDist::Fixed(1),
        };
        sched.validate(2).unwrap();
        let mut st = ScheduleState::new(sched.clone(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(st.first_slot(0, &mut rng), Some(2));
        assert_eq!(st.next_slot(0, 2, &mut rng), Some(7));
        assert_eq!(st.next_slot(0, 7, &mut rng), None);
        assert_eq!(st.first_slot(1, &mut rng), Some(3));
        assert_eq!(st.next_slot(1, 3, &mut rng), None);

        let bad = Schedule {
            kind: ScheduleKind::Scripted { times: vec![vec![2, 2]] },
            interval: IntervalDist::Fixed(1),
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn interval_and_schedule_validation_rejects_degenerate_inputs() {
        assert!(IntervalDist::Fixed(0).validate().is_err());
        assert!(IntervalDist::Uniform { lo: 3, hi: 2 }.validate().is_err());
        let s = Schedule {
            kind: ScheduleKind::RandomSubset { prob: 0.0, max_skip: 1 },
            interval: IntervalDist::Fixed(1),
        };
        assert!(s.validate(2).is_err());
    }
}
