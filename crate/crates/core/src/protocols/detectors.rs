//! Detector implementations.
//!
//! All detectors share the `Recorder` bookkeeping (which blocks need an
//! entry, what has been recorded, emit-once). The interesting differences
//! live in `on_update`/`on_message`.

use crate::math::sub_max_abs;
use crate::protocols::{Ctx, Detector, ProtocolKind, SnapshotResult};
use crate::simnet::{Message, MessageKind, ProcessId};

/// Entry bookkeeping shared by every detector.
#[derive(Debug, Clone)]
struct Recorder {
    pid: ProcessId,
    epoch: u32,
    applicable: Vec<bool>,
    entries: Vec<Option<Vec<f64>>>,
    recorded_at: Vec<Option<u64>>,
    emitted: bool,
}

impl Recorder {
    fn new(pid: ProcessId, n: usize, in_neighbors: &[usize]) -> Self {
        let mut applicable = vec![false; n];
        applicable[pid] = true;
        for &j in in_neighbors {
            applicable[j] = true;
        }
        Recorder {
            pid,
            epoch: 0,
            applicable,
            entries: vec![None; n],
            recorded_at: vec![None; n],
            emitted: false,
        }
    }

    fn reset(&mut self, epoch: u32) {
        self.epoch = epoch;
        self.entries.iter_mut().for_each(|e| *e = None);
        self.recorded_at.iter_mut().for_each(|e| *e = None);
        self.emitted = false;
    }

    fn own_defined(&self) -> bool {
        self.entries[self.pid].is_some()
    }

    fn entry_defined(&self, j: usize) -> bool {
        self.entries[j].is_some()
    }

    fn record(&mut self, j: usize, value: Vec<f64>, at: u64) {
        debug_assert!(self.applicable[j], "recording a block outside the dependency set");
        self.entries[j] = Some(value);
        self.recorded_at[j] = Some(at);
    }

    fn clear(&mut self, j: usize) {
        self.entries[j] = None;
        self.recorded_at[j] = None;
    }

    fn complete(&self) -> bool {
        self.applicable
            .iter()
            .zip(&self.entries)
            .all(|(&a, e)| !a || e.is_some())
    }

    /// Emit the completed snapshot once per epoch.
    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        if self.emitted || !self.complete() {
            return None;
        }
        self.emitted = true;
        Some(SnapshotResult {
            pid: self.pid,
            epoch: self.epoch,
            entries: self.entries.clone(),
            recorded_at: self.recorded_at.clone(),
            completed_at: time,
            channel_records: None,
        })
    }
}

fn is_current_marker(kind: &MessageKind, epoch: u32) -> Option<(u32, Option<&Vec<f64>>)> {
    match kind {
        MessageKind::Marker { epoch: e, attempt, payload } if *e == epoch => {
            Some((*attempt, payload.as_ref()))
        }
        _ => None,
    }
}

/// Classic marker protocol: on its trigger a process records its whole local
/// view at one instant, then records every incoming channel until that
/// channel's marker arrives. Consistency of the assembled cut needs FIFO
/// channels; the channel records are part of the snapshot.
pub struct Cls {
    rec: Recorder,
    out_neighbors: Vec<ProcessId>,
    initiator: bool,
    recording: bool,
    channel_open: Vec<bool>,
    channels: Vec<Option<Vec<(u64, Vec<f64>)>>>,
    in_neighbor: Vec<bool>,
}

impl Cls {
    fn new(
        pid: ProcessId,
        n: usize,
        in_neighbors: &[usize],
        out_neighbors: Vec<ProcessId>,
        initiator: bool,
    ) -> Self {
        let mut in_neighbor = vec![false; n];
        for &j in in_neighbors {
            in_neighbor[j] = true;
        }
        Cls {
            rec: Recorder::new(pid, n, in_neighbors),
            out_neighbors,
            initiator,
            recording: false,
            channel_open: vec![false; n],
            channels: vec![None; n],
            in_neighbor,
        }
    }

    /// Record the local state (the full current view) and open every incoming
    /// channel for recording.
    fn record_local(&mut self, ctx: &mut Ctx<'_>) {
        self.recording = true;
        let n = self.channels.len();
        for j in 0..n {
            if self.rec.applicable[j] {
                self.rec.record(j, ctx.state.view_block(j).to_vec(), ctx.event_index);
            }
            if self.in_neighbor[j] {
                self.channel_open[j] = true;
                self.channels[j] = Some(Vec::new());
            }
        }
        for &dst in &self.out_neighbors {
            ctx.out.push((
                dst,
                MessageKind::Marker { epoch: self.rec.epoch, attempt: 0, payload: None },
            ));
        }
    }

    fn channels_closed(&self) -> bool {
        self.channel_open.iter().all(|&open| !open)
    }
}

impl Detector for Cls {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Cls
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        if self.initiator && !self.recording && ctx.state.is_locally_converged() {
            self.record_local(ctx);
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        match &msg.kind {
            MessageKind::Computation { payload, .. } => {
                if self.recording && self.channel_open[msg.src] {
                    if let Some(rec) = self.channels[msg.src].as_mut() {
                        rec.push((msg.seq, payload.clone()));
                    }
                }
            }
            MessageKind::Marker { epoch, .. } if *epoch == self.rec.epoch => {
                if !self.recording {
                    self.record_local(ctx);
                }
                self.channel_open[msg.src] = false;
            }
            _ => {}
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        if !self.recording || !self.channels_closed() {
            return None;
        }
        let mut res = self.rec.poll(time)?;
        res.channel_records = Some(self.channels.clone());
        Some(res)
    }

    fn reset(&mut self, epoch: u32, _iters: &[u64]) {
        self.rec.reset(epoch);
        self.recording = false;
        self.channel_open.iter_mut().for_each(|c| *c = false);
        self.channels.iter_mut().for_each(|c| *c = None);
    }
}

/// Marker protocol recording the receiver's current view. With `cascade` the
/// first marker makes a process record its own block immediately, converged
/// or not; without it a process waits for its own local convergence.
pub struct Ais {
    cascade: bool,
    rec: Recorder,
    out_neighbors: Vec<ProcessId>,
}

impl Ais {
    fn record_own_and_broadcast(&mut self, ctx: &mut Ctx<'_>) {
        self.rec.record(self.rec.pid, ctx.state.own_block().to_vec(), ctx.event_index);
        for &dst in &self.out_neighbors {
            ctx.out.push((
                dst,
                MessageKind::Marker { epoch: self.rec.epoch, attempt: 0, payload: None },
            ));
        }
    }
}

impl Detector for Ais {
    fn kind(&self) -> ProtocolKind {
        if self.cascade {
            ProtocolKind::Ais1
        } else {
            ProtocolKind::Ais2
        }
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        if !self.rec.own_defined() && ctx.state.is_locally_converged() {
            self.record_own_and_broadcast(ctx);
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        if is_current_marker(&msg.kind, self.rec.epoch).is_none() {
            return;
        }
        if !self.rec.entry_defined(msg.src) {
            self.rec.record(msg.src, ctx.state.view_block(msg.src).to_vec(), ctx.event_index);
        }
        if self.cascade && !self.rec.own_defined() {
            self.record_own_and_broadcast(ctx);
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        self.rec.poll(time)
    }

    fn reset(&mut self, epoch: u32, _iters: &[u64]) {
        self.rec.reset(epoch);
    }
}

/// Marker protocol whose markers carry the sender's recorded block, so the
/// receiver records exactly the sender's value no matter how the channel
/// reorders. With `cascade` as in `Ais`.
pub struct NfaisValue {
    cascade: bool,
    rec: Recorder,
    out_neighbors: Vec<ProcessId>,
}

impl NfaisValue {
    fn record_own_and_broadcast(&mut self, ctx: &mut Ctx<'_>) {
        let own = ctx.state.own_block().to_vec();
        self.rec.record(self.rec.pid, own.clone(), ctx.event_index);
        for &dst in &self.out_neighbors {
            ctx.out.push((
                dst,
                MessageKind::Marker {
                    epoch: self.rec.epoch,
                    attempt: 0,
                    payload: Some(own.clone()),
                },
            ));
        }
    }
}

impl Detector for NfaisValue {
    fn kind(&self) -> ProtocolKind {
        if self.cascade {
            ProtocolKind::Nfais1
        } else {
            ProtocolKind::Nfais2
        }
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        if !self.rec.own_defined() && ctx.state.is_locally_converged() {
            self.record_own_and_broadcast(ctx);
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        let Some((_, payload)) = is_current_marker(&msg.kind, self.rec.epoch) else {
            return;
        };
        let payload = payload.expect("value-carrying protocol received a bare marker");
        if !self.rec.entry_defined(msg.src) {
            self.rec.record(msg.src, payload.clone(), ctx.event_index);
        }
        if self.cascade && !self.rec.own_defined() {
            self.record_own_and_broadcast(ctx);
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        self.rec.poll(time)
    }

    fn reset(&mut self, epoch: u32, _iters: &[u64]) {
        self.rec.reset(epoch);
    }
}

/// Marker-free detector. A peer entry is recorded when two consecutively
/// received updates from that peer are consecutive sender iterations and
/// differ by less than eps: that is exactly the sender's own steadiness test,
/// evaluated on the same two values, so the recorded entry equals the
/// sender's record bit for bit. Needs computation messages delivered in send
/// order. `watermarks` holds each sender's update count at the last epoch
/// reset; pairs at or below it belong to the previous epoch.
pub struct Nfais3 {
    rec: Recorder,
    watermarks: Vec<u64>,
}

impl Detector for Nfais3 {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Nfais3
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        if !self.rec.own_defined() && ctx.state.is_locally_converged() {
            self.rec.record(self.rec.pid, ctx.state.own_block().to_vec(), ctx.event_index);
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        if !matches!(msg.kind, MessageKind::Computation { .. }) {
            return;
        }
        let j = msg.src;
        if self.rec.entry_defined(j) {
            return;
        }
        let Some((prev, latest)) = ctx.state.received_pair(j).and_then(|b| b.pair()) else {
            return;
        };
        if latest.1 <= self.watermarks[j] {
            return;
        }
        if latest.1 == prev.1 + 1 && sub_max_abs(&latest.0, &prev.0) < ctx.state.eps() {
            self.rec.record(j, latest.0.clone(), ctx.event_index);
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        self.rec.poll(time)
    }

    fn reset(&mut self, epoch: u32, iters: &[u64]) {
        self.rec.reset(epoch);
        self.watermarks.copy_from_slice(iters);
    }
}

/// Per-peer state of the two-phase bounded-overtaking detector.
#[derive(Debug, Clone, Default)]
struct PeerSlot {
    attempt: Option<u32>,
    value: Option<Vec<f64>>,
    value_at: Option<u64>,
    confirmed: bool,
    discarded: bool,
}

impl PeerSlot {
    fn clear(&mut self) {
        *self = PeerSlot::default();
    }

    fn complete(&self) -> bool {
        self.value.is_some() && self.confirmed && !self.discarded
    }
}

/// Two-phase detector for channels with overtaking bounded by `eta`. A
/// process arms after `max(1, eta)` consecutive steady updates, records its
/// block and sends a marker; after `eta` further steady updates it confirms
/// with flag 1. Any unsteady update in between retracts the attempt with
/// flag 0. Receivers keep an entry only when its marker's attempt was
/// confirmed; attempts are totally ordered per sender, so stale markers and
/// flags are recognized by attempt number even when reordered.
pub struct Nfais4 {
    eta: u32,
    rec: Recorder,
    out_neighbors: Vec<ProcessId>,
    attempt: u32,
    /// Steady count at the moment the current attempt's marker was sent.
    armed: Option<u64>,
    own_confirmed: bool,
    peers: Vec<PeerSlot>,
    in_neighbor: Vec<bool>,
}

impl Nfais4 {
    fn arm_threshold(&self) -> u64 {
        (self.eta as u64).max(1)
    }

    fn broadcast(&self, ctx: &mut Ctx<'_>, kind: MessageKind) {
        for &dst in &self.out_neighbors {
            ctx.out.push((dst, kind.clone()));
        }
    }

    fn peers_complete(&self) -> bool {
        self.in_neighbor
            .iter()
            .zip(&self.peers)
            .all(|(&is_in, slot)| !is_in || slot.complete())
    }
}

impl Detector for Nfais4 {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Nfais4
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        let epoch = self.rec.epoch;
        if !self.rec.own_defined() && ctx.state.steady_count() >= self.arm_threshold() {
            self.attempt += 1;
            self.rec.record(self.rec.pid, ctx.state.own_block().to_vec(), ctx.event_index);
            self.broadcast(ctx, MessageKind::Marker { epoch, attempt: self.attempt, payload: None });
            self.armed = Some(ctx.state.steady_count());
            self.own_confirmed = false;
        }
        if let Some(base) = self.armed {
            if ctx.state.is_locally_converged() {
                if ctx.state.steady_count() >= base + self.eta as u64 {
                    self.broadcast(
                        ctx,
                        MessageKind::FlaggedMarker { epoch, attempt: self.attempt, flag: true },
                    );
                    self.own_confirmed = true;
                    self.armed = None;
                }
            } else {
                // The own block moved after the marker: retract this attempt.
                self.broadcast(
                    ctx,
                    MessageKind::FlaggedMarker { epoch, attempt: self.attempt, flag: false },
                );
                self.rec.clear(self.rec.pid);
                self.armed = None;
                self.own_confirmed = false;
            }
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        let slot = &mut self.peers[msg.src];
        match &msg.kind {
            MessageKind::Marker { epoch, attempt, .. } if *epoch == self.rec.epoch => {
                match slot.attempt {
                    Some(cur) if *attempt < cur => {}
                    Some(cur) if *attempt == cur => {
                        // The confirmation overtook its own marker; fill the value in.
                        if !slot.discarded && slot.value.is_none() {
                            slot.value = Some(ctx.state.view_block(msg.src).to_vec());
                            slot.value_at = Some(ctx.event_index);
                        }
                    }
                    _ => {
                        *slot = PeerSlot {
                            attempt: Some(*attempt),
                            value: Some(ctx.state.view_block(msg.src).to_vec()),
                            value_at: Some(ctx.event_index),
                            confirmed: false,
                            discarded: false,
                        };
                    }
                }
            }
            MessageKind::FlaggedMarker { epoch, attempt, flag } if *epoch == self.rec.epoch => {
                match slot.attempt {
                    Some(cur) if *attempt < cur => {}
                    Some(cur) if *attempt == cur => {
                        if *flag {
                            slot.confirmed = true;
                        } else {
                            slot.discarded = true;
                            slot.value = None;
                            slot.value_at = None;
                        }
                    }
                    _ => {
                        *slot = PeerSlot {
                            attempt: Some(*attempt),
                            value: None,
                            value_at: None,
                            confirmed: *flag,
                            discarded: !*flag,
                        };
                    }
                }
            }
            _ => {}
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        if !(self.rec.own_defined() && self.own_confirmed && self.peers_complete()) {
            return None;
        }
        for (j, slot) in self.peers.iter().enumerate() {
            if self.in_neighbor[j] {
                self.rec.entries[j] = slot.value.clone();
                self.rec.recorded_at[j] = slot.value_at;
            }
        }
        self.rec.poll(time)
    }

    fn reset(&mut self, epoch: u32, _iters: &[u64]) {
        self.rec.reset(epoch);
        self.attempt = 0;
        self.armed = None;
        self.own_confirmed = false;
        self.peers.iter_mut().for_each(PeerSlot::clear);
    }
}

/// Single-marker variant for bounded-overtaking channels with control
/// priority: the marker itself cannot be passed by older computation
/// messages, so the receiver's view at marker arrival is at most eta sender
/// updates stale and no confirmation phase is needed. Arms after
/// `max(1, eta)` steady updates; with eta 0 this degenerates to `ais2`.
pub struct Nfais5 {
    eta: u32,
    rec: Recorder,
    out_neighbors: Vec<ProcessId>,
}

impl Detector for Nfais5 {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Nfais5
    }

    fn on_update(&mut self, ctx: &mut Ctx<'_>) {
        if !self.rec.own_defined() && ctx.state.steady_count() >= (self.eta as u64).max(1) {
            self.rec.record(self.rec.pid, ctx.state.own_block().to_vec(), ctx.event_index);
            for &dst in &self.out_neighbors {
                ctx.out.push((
                    dst,
                    MessageKind::Marker { epoch: self.rec.epoch, attempt: 0, payload: None },
                ));
            }
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut Ctx<'_>) {
        if is_current_marker(&msg.kind, self.rec.epoch).is_none() {
            return;
        }
        if !self.rec.entry_defined(msg.src) {
            self.rec.record(msg.src, ctx.state.view_block(msg.src).to_vec(), ctx.event_index);
        }
    }

    fn poll(&mut self, time: u64) -> Option<SnapshotResult> {
        self.rec.poll(time)
    }

    fn reset(&mut self, epoch: u32, _iters: &[u64]) {
        self.rec.reset(epoch);
    }
}

/// Build a detector for process `pid`. `eta` is read only by the bounded
/// protocols and must match the channel policy's overtaking budget.
/// `cls_initiator` marks the processes that may start a `cls` snapshot.
pub fn make_detector(
    kind: ProtocolKind,
    pid: ProcessId,
    n: usize,
    in_neighbors: &[usize],
    out_neighbors: &[usize],
    eta: u32,
    cls_initiator: bool,
) -> Box<dyn Detector> {
    let rec = Recorder::new(pid, n, in_neighbors);
    let outs = out_neighbors.to_vec();
    match kind {
        ProtocolKind::Cls => Box::new(Cls::new(pid, n, in_neighbors, outs, cls_initiator)),
        ProtocolKind::Ais1 => Box::new(Ais { cascade: true, rec, out_neighbors: outs }),
        ProtocolKind::Ais2 => Box::new(Ais { cascade: false, rec, out_neighbors: outs }),
        ProtocolKind::Nfais1 => Box::new(NfaisValue { cascade: true, rec, out_neighbors: outs }),
        ProtocolKind::Nfais2 => Box::new(NfaisValue { cascade: false, rec, out_neighbors: outs }),
        ProtocolKind::Nfais3 => Box::new(Nfais3 { rec, watermarks: vec![0; n] }),
        ProtocolKind::Nfais4 => {
            let mut in_neighbor = vec![false; n];
            for &j in in_neighbors {
                in_neighbor[j] = true;
            }
            Box::new(Nfais4 {
                eta,
                rec,
                out_neighbors: outs,
                attempt: 0,
                armed: None,
                own_confirmed: false,
                peers: vec![PeerSlot::default(); n],
                in_neighbor,
            })
        }
        ProtocolKind::Nfais5 => Box::new(Nfais5 { eta, rec, out_neighbors: outs }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ProcessState;
    use crate::math::{BlockStructure, BlockVector, LinearMap, SparseBlockMatrix};
    use crate::simnet::ChannelPolicy;

    // Two mutually dependent scalar blocks; f(x) = 0.9 T x + c with T the swap.
    fn swap_map(c: f64) -> LinearMap {
        let s = BlockStructure::uniform(2, 1);
        let m = SparseBlockMatrix::from_triplets(s, &[(0, 1, 0.9), (1, 0, 0.9)]);
        let off = BlockVector::new(vec![vec![c], vec![c]]);
        LinearMap::new(m, off)
    }

    fn state_pair(eps: f64) -> (ProcessState, ProcessState) {
        let x0 = BlockVector::zeros(&BlockStructure::uniform(2, 1));
        (ProcessState::new(0, &x0, &[1], eps), ProcessState::new(1, &x0, &[0], eps))
    }

    fn marker(src: usize, dst: usize, epoch: u32) -> Message {
        Message { src, dst, seq: 0, kind: MessageKind::Marker { epoch, attempt: 0, payload: None } }
    }

    fn comp(src: usize, dst: usize, seq: u64, payload: Vec<f64>, sender_iter: u64) -> Message {
        Message { src, dst, seq, kind: MessageKind::Computation { payload, sender_iter } }
    }

    struct Hook<'a> {
        state: &'a ProcessState,
        out: Vec<(ProcessId, MessageKind)>,
        idx: u64,
    }

    impl<'a> Hook<'a> {
        fn new(state: &'a ProcessState) -> Self {
            Hook { state, out: Vec::new(), idx: 0 }
        }

        fn ctx(&mut self) -> Ctx<'_> {
            self.idx += 1;
            Ctx { state: self.state, time: self.idx, event_index: self.idx, out: &mut self.out }
        }
    }

    #[test]
    fn ais_cascade_records_own_block_on_first_marker() {
        let (p0, _) = state_pair(1e-6);
        // p0 has not converged (no update at all), receives a marker from 1.
        let mut d = make_detector(ProtocolKind::Ais1, 0, 2, &[1], &[1], 0, false);
        let mut hook = Hook::new(&p0);
        d.on_message(&marker(1, 0, 0), &mut hook.ctx());
        // Cascade recorded both the peer entry and the own block, and sent a marker.
        let res = d.poll(5).expect("snapshot should complete");
        assert_eq!(res.entries[0], Some(vec![0.0]));
        assert_eq!(res.entries[1], Some(vec![0.0]));
        assert_eq!(hook.out.len(), 1);
        assert!(matches!(hook.out[0], (1, MessageKind::Marker { .. })));
    }

    #[test]
    fn ais2_does_not_cascade() {
        let (p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Ais2, 0, 2, &[1], &[1], 0, false);
        let mut hook = Hook::new(&p0);
        d.on_message(&marker(1, 0, 0), &mut hook.ctx());
        assert!(d.poll(5).is_none(), "own block must wait for local convergence");
        assert!(hook.out.is_empty());
    }

    #[test]
    fn ais_ignores_markers_from_previous_epochs() {
        let (p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Ais1, 0, 2, &[1], &[1], 0, false);
        d.reset(3, &[0, 0]);
        let mut hook = Hook::new(&p0);
        d.on_message(&marker(1, 0, 2), &mut hook.ctx());
        assert!(d.poll(5).is_none());
        assert!(hook.out.is_empty());
    }

    #[test]
    fn snapshot_emitted_exactly_once_per_epoch() {
        let (p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Ais1, 0, 2, &[1], &[1], 0, false);
        let mut hook = Hook::new(&p0);
        d.on_message(&marker(1, 0, 0), &mut hook.ctx());
        assert!(d.poll(5).is_some());
        assert!(d.poll(6).is_none());
        d.reset(1, &[0, 0]);
        let mut hook = Hook::new(&p0);
        d.on_message(&marker(1, 0, 1), &mut hook.ctx());
        let res = d.poll(9).expect("new epoch completes again");
        assert_eq!(res.epoch, 1);
    }

    #[test]
    fn value_markers_record_the_senders_value_not_the_view() {
        let f = swap_map(0.0);
        let (mut p0, mut p1) = state_pair(1e-2);
        let mut d0 = make_detector(ProtocolKind::Nfais2, 0, 2, &[1], &[1], 0, false);
        let mut d1 = make_detector(ProtocolKind::Nfais2, 1, 2, &[0], &[0], 0, false);

        // p1 converges at value 5.0 and broadcasts it in the marker.
        p1.on_computation_receive(0, &[5.0 / 0.9], 1);
        p1.local_update(&f);
        p1.local_update(&f);
        assert!(p1.is_locally_converged());
        let mut hook1 = Hook::new(&p1);
        d1.on_update(&mut hook1.ctx());
        let (_, kind) = hook1.out.pop().expect("marker sent");
        let recorded_by_sender = match &kind {
            MessageKind::Marker { payload: Some(v), .. } => v.clone(),
            other => panic!("expected payload marker, got {other:?}"),
        };

        // p0's view of block 1 is stale (still 0), yet it records the payload.
        let mut hook0 = Hook::new(&p0);
        d0.on_message(
            &Message { src: 1, dst: 0, seq: 7, kind },
            &mut hook0.ctx(),
        );
        p0.local_update(&f);
        let mut hook0b = Hook::new(&p0);
        d0.on_update(&mut hook0b.ctx());
        let own1 = {
            let mut h = Hook::new(&p1);
            let from0 = Message {
                src: 0,
                dst: 1,
                seq: 0,
                kind: MessageKind::Marker { epoch: 0, attempt: 0, payload: Some(vec![0.0]) },
            };
            d1.on_message(&from0, &mut h.ctx());
            d1.poll(10)
        };
        let res0 = d0.poll(11);
        // May not be complete (p0 not converged), but the peer entry must be set.
        if let Some(r) = res0 {
            assert_eq!(r.entries[1].as_deref(), Some(recorded_by_sender.as_slice()));
        }
        if let Some(r) = own1 {
            assert_eq!(
                r.entries[1].as_deref(),
                Some(recorded_by_sender.as_slice()),
                "sender's own entry is the broadcast value"
            );
        }
    }

    #[test]
    fn pair_rule_requires_consecutive_sender_iterations() {
        let (mut p0, _) = state_pair(1e-2);
        let mut d = make_detector(ProtocolKind::Nfais3, 0, 2, &[1], &[1], 0, false);

        // A gap in sender iterations (1 then 3) must not record even when close.
        p0.on_computation_receive(1, &[1.0], 1);
        let m = comp(1, 0, 0, vec![1.0], 1);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        p0.on_computation_receive(1, &[1.001], 3);
        let m = comp(1, 0, 1, vec![1.001], 3);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        assert!(d.poll(5).is_none());

        // Consecutive and close: records the later value.
        p0.on_computation_receive(1, &[1.002], 4);
        let m = comp(1, 0, 2, vec![1.002], 4);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        // Entry recorded; snapshot still waits for the own block.
        p0.on_computation_receive(1, &[9.0], 5);
        let m = comp(1, 0, 3, vec![9.0], 5);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        let f = swap_map(0.0);
        p0.local_update(&f);
        p0.local_update(&f);
        let mut h = Hook::new(&p0);
        d.on_update(&mut h.ctx());
        let res = d.poll(9).expect("complete");
        assert_eq!(res.entries[1], Some(vec![1.002]), "first qualifying pair wins");
        assert!(h.out.is_empty(), "nfais3 never sends control messages");
    }

    #[test]
    fn pair_rule_rejects_large_steps_and_respects_watermarks() {
        let (mut p0, _) = state_pair(1e-3);
        let mut d = make_detector(ProtocolKind::Nfais3, 0, 2, &[1], &[1], 0, false);
        d.reset(1, &[0, 6]);

        // Stale pair from before the reset: iterations 5, 6 are at or below
        // the watermark even though they are consecutive and steady.
        for (it, v) in [(5u64, 2.0f64), (6, 2.0001)] {
            p0.on_computation_receive(1, &[v], it);
            let m = comp(1, 0, it, vec![v], it);
            let mut h = Hook::new(&p0);
            d.on_message(&m, &mut h.ctx());
        }
        assert!(d.poll(3).is_none());

        // Post-reset pair with a large step: rejected by the eps test.
        p0.on_computation_receive(1, &[3.0], 7);
        let m = comp(1, 0, 7, vec![3.0], 7);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        assert!(d.poll(4).is_none());

        // Steady post-reset pair: records.
        p0.on_computation_receive(1, &[3.0005], 8);
        let m = comp(1, 0, 8, vec![3.0005], 8);
        let mut h = Hook::new(&p0);
        d.on_message(&m, &mut h.ctx());
        let f = swap_map(0.0);
        p0.local_update(&f);
        p0.local_update(&f);
        let mut h = Hook::new(&p0);
        d.on_update(&mut h.ctx());
        let res = d.poll(9).expect("complete");
        assert_eq!(res.epoch, 1);
        assert_eq!(res.entries[1], Some(vec![3.0005]));
    }

    /// Drive one process against the identity-plus-tiny-step map so every
    /// update is steady and inspect the nfais4 send sequence.
    #[test]
    fn nfais4_arms_then_confirms_after_eta_steady_updates() {
        let s = BlockStructure::uniform(2, 1);
        let m = SparseBlockMatrix::from_triplets(s.clone(), &[(0, 0, 1.0), (1, 1, 1.0)]);
        let f = LinearMap::new(m, BlockVector::zeros(&s));
        let x0 = BlockVector::zeros(&s);
        let mut p = ProcessState::new(0, &x0, &[1], 1e-6);
        let mut d = make_detector(ProtocolKind::Nfais4, 0, 2, &[1], &[1], 2, false);

        let mut sent = Vec::new();
        for _ in 0..5 {
            p.local_update(&f);
            let mut h = Hook::new(&p);
            d.on_update(&mut h.ctx());
            sent.extend(h.out.into_iter().map(|(_, k)| k));
        }
        // eta = 2: marker after 2 steady updates, flag after 2 more.
        assert_eq!(sent.len(), 2);
        assert!(matches!(sent[0], MessageKind::Marker { attempt: 1, .. }));
        assert!(matches!(sent[1], MessageKind::FlaggedMarker { attempt: 1, flag: true, .. }));
    }

    #[test]
    fn nfais4_retracts_on_unsteady_update_and_rearms_with_new_attempt() {
        // Process 0 sends to 1 but depends on nobody, so its snapshot only
        // needs its own confirmation and every send is observable.
        let s = BlockStructure::uniform(2, 1);
        let ident = LinearMap::new(
            SparseBlockMatrix::from_triplets(s.clone(), &[(0, 0, 1.0), (1, 1, 1.0)]),
            BlockVector::zeros(&s),
        );
        let bump = LinearMap::new(
            SparseBlockMatrix::from_triplets(s.clone(), &[(0, 0, 1.0), (1, 1, 1.0)]),
            BlockVector::new(vec![vec![1.0], vec![0.0]]),
        );
        let mut p = ProcessState::new(0, &BlockVector::zeros(&s), &[], 1e-6);
        let mut d = make_detector(ProtocolKind::Nfais4, 0, 2, &[], &[1], 2, false);

        let mut sent = Vec::new();
        let drive = |p: &mut ProcessState, d: &mut Box<dyn Detector>, f: &LinearMap| {
            p.local_update(f);
            let mut h = Hook::new(p);
            d.on_update(&mut h.ctx());
            h.out.into_iter().map(|(_, k)| k).collect::<Vec<_>>()
        };
        sent.extend(drive(&mut p, &mut d, &ident));
        sent.extend(drive(&mut p, &mut d, &ident)); // marker, attempt 1
        sent.extend(drive(&mut p, &mut d, &bump)); // unsteady: flag 0
        sent.extend(drive(&mut p, &mut d, &ident));
        sent.extend(drive(&mut p, &mut d, &ident)); // marker, attempt 2
        sent.extend(drive(&mut p, &mut d, &ident));
        sent.extend(drive(&mut p, &mut d, &ident)); // eta further steady: flag 1

        assert!(matches!(sent[0], MessageKind::Marker { attempt: 1, .. }));
        assert!(matches!(sent[1], MessageKind::FlaggedMarker { attempt: 1, flag: false, .. }));
        assert!(matches!(sent[2], MessageKind::Marker { attempt: 2, .. }));
        assert!(matches!(sent[3], MessageKind::FlaggedMarker { attempt: 2, flag: true, .. }));
        assert_eq!(sent.len(), 4);
        // The record taken by the retracted attempt is gone; attempt 2
        // recorded the post-bump value.
        let res = d.poll(20).expect("complete after confirmation");
        assert_eq!(res.entries[0], Some(vec![1.0]));
        assert_eq!(res.entries[1], None);
    }

    #[test]
    fn nfais4_receiver_handles_reordered_and_stale_control_messages() {
        let (p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Nfais4, 0, 2, &[1], &[1], 2, false);

        let flag = |attempt, flag| Message {
            src: 1,
            dst: 0,
            seq: 0,
            kind: MessageKind::FlaggedMarker { epoch: 0, attempt, flag },
        };
        let mark = |attempt| Message {
            src: 1,
            dst: 0,
            seq: 0,
            kind: MessageKind::Marker { epoch: 0, attempt, payload: None },
        };

        // Confirmation overtakes its marker: value is filled in on arrival.
        let mut h = Hook::new(&p0);
        d.on_message(&flag(1, true), &mut h.ctx());
        d.on_message(&mark(1), &mut h.ctx());
        // Own side not converged yet, so no snapshot; but a stale retraction
        // of attempt 0 must not disturb attempt 1.
        d.on_message(&flag(0, false), &mut h.ctx());
        // A newer attempt replaces the slot even when attempt 1 was complete.
        d.on_message(&mark(2), &mut h.ctx());
        d.on_message(&flag(2, false), &mut h.ctx());
        // Late marker for the retracted attempt 2 must stay discarded.
        d.on_message(&mark(2), &mut h.ctx());
        d.on_message(&flag(3, true), &mut h.ctx());
        d.on_message(&mark(3), &mut h.ctx());

        // Drive the own side to confirmation with an identity map.
        let s = BlockStructure::uniform(2, 1);
        let ident = LinearMap::new(
            SparseBlockMatrix::from_triplets(s.clone(), &[(0, 0, 1.0), (1, 1, 1.0)]),
            BlockVector::zeros(&s),
        );
        let mut p = ProcessState::new(0, &BlockVector::zeros(&s), &[1], 1e-6);
        for _ in 0..4 {
            p.local_update(&ident);
            let mut h = Hook::new(&p);
            d.on_update(&mut h.ctx());
        }
        let res = d.poll(30).expect("attempt 3 confirmed on both sides");
        assert_eq!(res.entries[1], Some(vec![0.0]));
    }

    #[test]
    fn nfais5_waits_for_eta_steady_updates_before_its_single_marker() {
        let s = BlockStructure::uniform(1, 1);
        let ident = LinearMap::new(
            SparseBlockMatrix::from_triplets(s.clone(), &[(0, 0, 1.0)]),
            BlockVector::zeros(&s),
        );
        let mut p = ProcessState::new(0, &BlockVector::zeros(&s), &[], 1e-6);
        let mut d = make_detector(ProtocolKind::Nfais5, 0, 1, &[], &[], 3, false);
        let mut markers = 0;
        for k in 1..=5 {
            p.local_update(&ident);
            let mut h = Hook::new(&p);
            d.on_update(&mut h.ctx());
            markers += h.out.len();
            if k < 3 {
                assert_eq!(markers, 0, "armed too early at steady count {k}");
            }
        }
        assert_eq!(markers, 0, "no out-neighbors, nothing to send");
        assert!(d.poll(9).is_some());

        // eta = 0 arms at the first steady update, like ais2.
        let mut p = ProcessState::new(0, &BlockVector::zeros(&s), &[], 1e-6);
        let mut d = make_detector(ProtocolKind::Nfais5, 0, 1, &[], &[], 0, false);
        p.local_update(&ident);
        let mut h = Hook::new(&p);
        d.on_update(&mut h.ctx());
        assert!(d.poll(2).is_some());
    }

    #[test]
    fn cls_records_channel_contents_between_record_and_marker() {
        let (mut p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Cls, 0, 2, &[1], &[1], 0, true);

        // Messages before the record point are not channel contents.
        p0.on_computation_receive(1, &[0.5], 1);
        let mut h = Hook::new(&p0);
        d.on_message(&comp(1, 0, 0, vec![0.5], 1), &mut h.ctx());

        // Trigger: locally converged update.
        let f = swap_map(0.0);
        p0.local_update(&f);
        p0.local_update(&f);
        assert!(p0.is_locally_converged());
        let mut h = Hook::new(&p0);
        d.on_update(&mut h.ctx());
        assert!(
            matches!(h.out.as_slice(), [(1, MessageKind::Marker { .. })]),
            "marker broadcast at record point"
        );

        // In-flight messages delivered before the channel's marker are recorded.
        p0.on_computation_receive(1, &[0.6], 2);
        let mut h = Hook::new(&p0);
        d.on_message(&comp(1, 0, 1, vec![0.6], 2), &mut h.ctx());
        p0.on_computation_receive(1, &[0.7], 3);
        let mut h = Hook::new(&p0);
        d.on_message(&comp(1, 0, 2, vec![0.7], 3), &mut h.ctx());
        assert!(d.poll(8).is_none(), "channel still open");

        let mut h = Hook::new(&p0);
        d.on_message(&marker(1, 0, 0), &mut h.ctx());
        let res = d.poll(9).expect("all channels closed");
        let records = res.channel_records.expect("cls records channels");
        assert_eq!(records[1], Some(vec![(1, vec![0.6]), (2, vec![0.7])]));

        // After the marker the channel stops recording.
        assert!(res.entries[0].is_some() && res.entries[1].is_some());
    }

    #[test]
    fn cls_non_initiator_records_on_first_marker_with_empty_channel() {
        let (p0, _) = state_pair(1e-6);
        let mut d = make_detector(ProtocolKind::Cls, 0, 2, &[1], &[1], 0, false);
        let mut h = Hook::new(&p0);
        d.on_message(&marker(1, 0, 0), &mut h.ctx());
        let res = d.poll(4).expect("record-on-marker closes the only channel");
        assert_eq!(res.channel_records.unwrap()[1], Some(vec![]));
    }

    #[test]
    fn compatibility_matrix_matches_the_ordering_assumptions() {
        use ChannelPolicy as P;
        let fifo = P::Fifo;
        let arb = P::arbitrary();
        let bc2 = P::bounded_cross(2);
        let bc0 = P::bounded_cross(0);
        let tf = P::typed_fifo();

        for k in [ProtocolKind::Cls, ProtocolKind::Ais1, ProtocolKind::Ais2] {
            assert!(k.check_compatibility(&fifo, false).is_ok());
            assert!(k.check_compatibility(&arb, false).is_err());
            assert!(k.check_compatibility(&bc2, false).is_err());
        }
        for k in [ProtocolKind::Nfais1, ProtocolKind::Nfais2] {
            for p in [&fifo, &arb, &bc2, &tf] {
                assert!(k.check_compatibility(p, false).is_ok());
            }
        }
        assert!(ProtocolKind::Nfais3.check_compatibility(&tf, false).is_ok());
        assert!(ProtocolKind::Nfais3.check_compatibility(&fifo, false).is_ok());
        assert!(ProtocolKind::Nfais3.check_compatibility(&arb, false).is_err());
        assert!(ProtocolKind::Nfais4.check_compatibility(&bc2, false).is_ok());
        assert!(ProtocolKind::Nfais4.check_compatibility(&arb, false).is_err());
        assert!(ProtocolKind::Nfais5.check_compatibility(&bc2, true).is_ok());
        assert!(ProtocolKind::Nfais5.check_compatibility(&bc2, false).is_err());
        assert!(ProtocolKind::Nfais5.check_compatibility(&bc0, false).is_ok());
        assert!(ProtocolKind::Nfais5.check_compatibility(&fifo, false).is_ok());
    }

    #[test]
    fn protocol_names_round_trip() {
        for k in ProtocolKind::ALL {
            assert_eq!(ProtocolKind::parse(k.name()), Some(k));
        }
        assert_eq!(ProtocolKind::parse("nfais9"), None);
    }
}
