use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::channel::Channel;
use super::{
    ChannelPolicy, EventLog, EventRecord, EventType, KindTag, LatencyDist, Message, MessageKind,
    NetError, ProcessId,
};

#[derive(Clone, Debug)]
pub struct NetConfig {
    pub n: usize,
    pub policy: ChannelPolicy,
    /// Per-channel overrides of the uniform policy, keyed by `(src, dst)`.
    pub overrides: Vec<((ProcessId, ProcessId), ChannelPolicy)>,
    pub latency: LatencyDist,
    /// When set, a computation message never arrives ahead of control
    /// traffic sent earlier on the same channel (control runs faster, data
    /// never outruns it). Required by the single-marker protocol.
    pub control_priority: bool,
    pub seed: u64,
}

impl NetConfig {
    pub fn uniform(n: usize, policy: ChannelPolicy, latency: LatencyDist, seed: u64) -> Self {
        NetConfig { n, policy, overrides: Vec::new(), latency, control_priority: false, seed }
    }
}

/// One popped scheduler entry: the process wakes, receives everything that
/// is deliverable, and (if `update` is set) owes one local update.
#[derive(Debug)]
pub struct Activation {
    pub time: u64,
    pub pid: ProcessId,
    pub update: bool,
    pub delivered: Vec<Message>,
}

/// How per-process scalars combine in the single convergence reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReduceOp {
    Max,
    /// `(sum_i c_i^p)^(1/p)`, accumulated in process order.
    SumP(f64),
}

/// The simulated network: channels, the activation queue, and the log.
pub struct Net {
    n: usize,
    now: u64,
    /// `channels[src][dst]`; the diagonal stays empty.
    channels: Vec<Vec<Option<Channel>>>,
    /// Min-heap of `(time, insertion order, pid, update)`.
    queue: BinaryHeap<Reverse<(u64, u64, usize, bool)>>,
    order: u64,
    rng: ChaCha8Rng,
    latency: LatencyDist,
    control_priority: bool,
    log: EventLog,
    reduction_count: u64,
    sent: u64,
    delivered: u64,
    control_msgs: u64,
    control_bytes: u64,
}

impl Net {
    pub fn new(cfg: &NetConfig) -> Result<Self, NetError> {
        if cfg.n == 0 {
            return Err(NetError::InvalidConfig("need at least one process".into()));
        }
        cfg.latency.validate()?;
        let mut channels: Vec<Vec<Option<Channel>>> = (0..cfg.n)
            .map(|src| {
                (0..cfg.n)
                    .map(|dst| (src != dst).then(|| Channel::new(cfg.policy)))
                    .collect()
            })
            .collect();
        for &((src, dst), policy) in &cfg.overrides {
            if src >= cfg.n || dst >= cfg.n {
                return Err(NetError::UnknownProcess(src.max(dst)));
            }
            if src == dst {
                return Err(NetError::SelfChannel(src));
            }
            channels[src][dst] = Some(Channel::new(policy));
        }
        Ok(Net {
            n: cfg.n,
            now: 0,
            channels,
            queue: BinaryHeap::new(),
            order: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            latency: cfg.latency.clone(),
            control_priority: cfg.control_priority,
            log: EventLog::default(),
            reduction_count: 0,
            sent: 0,
            delivered: 0,
            control_msgs: 0,
            control_bytes: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn reduction_count(&self) -> u64 {
        self.reduction_count
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn control_msgs(&self) -> u64 {
        self.control_msgs
    }

    pub fn control_bytes(&self) -> u64 {
        self.control_bytes
    }

    pub fn in_flight_total(&self) -> usize {
        self.channels
            .iter()
            .flatten()
            .filter_map(|c| c.as_ref())
            .map(|c| c.in_flight_len())
            .sum()
    }

    pub fn max_overtaken_seen(&self) -> u32 {
        self.channels
            .iter()
            .flatten()
            .filter_map(|c| c.as_ref())
            .map(|c| c.max_overtaken_seen())
            .max()
            .unwrap_or(0)
    }

    fn check_pid(&self, pid: ProcessId) -> Result<(), NetError> {
        if pid < self.n {
            Ok(())
        } else {
            Err(NetError::UnknownProcess(pid))
        }
    }

    /// Schedules a local update of `pid` at `time`.
    pub fn schedule_update(&mut self, pid: ProcessId, time: u64) {
        debug_assert!(pid < self.n && time >= self.now);
        self.queue.push(Reverse((time, self.order, pid, true)));
        self.order += 1;
    }

    fn schedule_wake(&mut self, pid: ProcessId, time: u64) {
        self.queue.push(Reverse((time, self.order, pid, false)));
        self.order += 1;
    }

    /// Sends `kind` from `src` to `dst`; latency is drawn from the seeded
    /// generator, delivery order is up to the channel policy.
    pub fn send(&mut self, src: ProcessId, dst: ProcessId, kind: MessageKind) -> Result<(), NetError> {
        self.check_pid(src)?;
        self.check_pid(dst)?;
        if src == dst {
            return Err(NetError::SelfChannel(src));
        }
        let latency = self.latency.sample(&mut self.rng);
        let ready_at = self.now + latency;
        let ch = self.channels[src][dst].as_mut().expect("off-diagonal channel");
        let seq = ch.assign_seq();
        let tag = kind.tag();
        let bytes = kind.byte_size();
        if tag != KindTag::Comp {
            self.control_msgs += 1;
            self.control_bytes += bytes;
        }
        let msg = Message { src, dst, seq, kind };
        ch.admit(msg, ready_at);
        self.sent += 1;
        self.log.push(EventRecord {
            time: self.now,
            etype: EventType::Send,
            src: Some(src),
            dst: Some(dst),
            kind: tag,
            seq,
        });
        self.schedule_wake(dst, ready_at);
        Ok(())
    }

    /// Pops the next activation, delivering everything deliverable to that
    /// process in `(ready, source, sequence)` order. Returns `None` when the
    /// queue is exhausted.
    pub fn step(&mut self) -> Option<Activation> {
        let Reverse((time, _, pid, update)) = self.queue.pop()?;
        debug_assert!(time >= self.now, "time must be monotone");
        self.now = time;
        let delivered = self.collect_deliveries(pid);
        Some(Activation { time, pid, update, delivered })
    }

    fn collect_deliveries(&mut self, pid: ProcessId) -> Vec<Message> {
        let mut out = Vec::new();
        loop {
            let mut best: Option<(u64, usize, u64, usize)> = None;
            for src in 0..self.n {
                if src == pid {
                    continue;
                }
                let ch = self.channels[src][pid].as_ref().expect("off-diagonal channel");
                if let Some((ready, seq, idx)) = ch.peek(self.now, self.control_priority) {
                    let key = (ready, src, seq, idx);
                    if best.map_or(true, |b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                        best = Some(key);
                    }
                }
            }
            let Some((_, src, seq, idx)) = best else { break };
            let msg = self.channels[src][pid].as_mut().unwrap().deliver(idx);
            debug_assert_eq!(msg.seq, seq);
            self.delivered += 1;
            self.log.push(EventRecord {
                time: self.now,
                etype: EventType::Deliver,
                src: Some(src),
                dst: Some(pid),
                kind: msg.kind.tag(),
                seq: msg.seq,
            });
            out.push(msg);
        }
        out
    }

    /// Records a local update of `pid` in the log.
    pub fn log_update(&mut self, pid: ProcessId, local_iter: u64) {
        self.log.push(EventRecord {
            time: self.now,
            etype: EventType::Update,
            src: Some(pid),
            dst: Some(pid),
            kind: KindTag::None,
            seq: local_iter,
        });
    }

    /// Records that `pid` completed its snapshot for `epoch`.
    pub fn log_snapshot(&mut self, pid: ProcessId, epoch: u32) {
        self.log.push(EventRecord {
            time: self.now,
            etype: EventType::Snapshot,
            src: Some(pid),
            dst: Some(pid),
            kind: KindTag::None,
            seq: epoch as u64,
        });
    }

    /// The single collective of the detection scheme: combines one scalar per
    /// process, instantaneously, and counts the invocation.
    pub fn reduce(&mut self, contributions: &[f64], op: ReduceOp) -> Result<f64, NetError> {
        if contributions.len() != self.n {
            return Err(NetError::BadContributions { expected: self.n, got: contributions.len() });
        }
        if let Some(index) = contributions.iter().position(|c| !c.is_finite()) {
            return Err(NetError::NonFiniteContribution { index });
        }
        let value = match op {
            ReduceOp::Max => contributions.iter().copied().fold(0.0f64, f64::max),
            ReduceOp::SumP(p) => {
                let mut acc = 0.0f64;
                for c in contributions {
                    acc += c.powf(p);
                }
                acc.powf(1.0 / p)
            }
        };
        let seq = self.reduction_count;
        self.reduction_count += 1;
        self.log.push(EventRecord {
            time: self.now,
            etype: EventType::Reduce,
            src: None,
            dst: None,
            kind: KindTag::None,
            seq,
        });
        Ok(value)
    }
}
