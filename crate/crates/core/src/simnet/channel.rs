use serde::{Deserialize, Serialize};

use super::{KindClass, Message};

/// Window size that keeps even "arbitrary" reordering finite, so every
/// message is eventually delivered.
pub const DEFAULT_MAX_HOLD: u32 = 64;

/// How far delivery on one directed channel may deviate from send order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChannelPolicy {
    /// Delivery order equals send order.
    Fifo,
    /// Any interleaving within a sliding window of `max_hold` in-flight
    /// messages.
    Arbitrary { max_hold: u32 },
    /// Crossing is bounded both ways: a message is overtaken by at most
    /// `eta` later sends, and a delivery may jump over at most `eta` older
    /// in-flight messages. `eta = 0` degenerates to FIFO.
    BoundedCross { eta: u32, max_hold: u32 },
    /// FIFO within each message kind; different kinds may cross freely
    /// inside the `max_hold` window.
    TypedFifo { max_hold: u32 },
}

impl ChannelPolicy {
    pub fn arbitrary() -> Self {
        ChannelPolicy::Arbitrary { max_hold: DEFAULT_MAX_HOLD }
    }

    pub fn bounded_cross(eta: u32) -> Self {
        ChannelPolicy::BoundedCross { eta, max_hold: DEFAULT_MAX_HOLD }
    }

    pub fn typed_fifo() -> Self {
        ChannelPolicy::TypedFifo { max_hold: DEFAULT_MAX_HOLD }
    }

    pub fn eta(&self) -> Option<u32> {
        match self {
            ChannelPolicy::BoundedCross { eta, .. } => Some(*eta),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelPolicy::Fifo => "fifo",
            ChannelPolicy::Arbitrary { .. } => "arbitrary",
            ChannelPolicy::BoundedCross { .. } => "bounded-cross",
            ChannelPolicy::TypedFifo { .. } => "typed-fifo",
        }
    }
}

struct InFlight {
    msg: Message,
    ready_at: u64,
    /// Later-sent messages on this channel already delivered past this one.
    overtaken: u32,
}

/// One directed channel. In-flight messages stay sorted by send sequence.
pub(crate) struct Channel {
    policy: ChannelPolicy,
    next_seq: u64,
    in_flight: Vec<InFlight>,
    max_overtaken_seen: u32,
}

impl Channel {
    pub fn new(policy: ChannelPolicy) -> Self {
        Channel { policy, next_seq: 0, in_flight: Vec::new(), max_overtaken_seen: 0 }
    }

    pub fn policy(&self) -> ChannelPolicy {
        self.policy
    }

    pub fn assign_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    pub fn admit(&mut self, msg: Message, ready_at: u64) {
        debug_assert!(self.in_flight.last().map_or(true, |m| m.msg.seq < msg.seq));
        self.in_flight.push(InFlight { msg, ready_at, overtaken: 0 });
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn max_overtaken_seen(&self) -> u32 {
        self.max_overtaken_seen
    }

    /// Whether in-flight message `idx` may be delivered now. `idx` equals the
    /// number of older in-flight messages it would jump over.
    fn valid(&self, idx: usize, control_priority: bool) -> bool {
        let m = &self.in_flight[idx];
        let ok = match self.policy {
            ChannelPolicy::Fifo => idx == 0,
            ChannelPolicy::Arbitrary { max_hold } => idx < max_hold as usize,
            ChannelPolicy::TypedFifo { max_hold } => {
                idx < max_hold as usize
                    && self.in_flight[..idx]
                        .iter()
                        .all(|o| o.msg.kind.class() != m.msg.kind.class())
            }
            ChannelPolicy::BoundedCross { eta, max_hold } => {
                idx <= eta as usize
                    && idx < max_hold as usize
                    && self.in_flight[..idx].iter().all(|o| o.overtaken < eta)
            }
        };
        if ok && control_priority && m.msg.kind.class() == KindClass::Computation {
            // Data never arrives ahead of control sent earlier on the channel.
            self.in_flight[..idx]
                .iter()
                .all(|o| o.msg.kind.class() == KindClass::Computation)
        } else {
            ok
        }
    }

    /// Best deliverable in-flight index at `now`: smallest `(ready_at, seq)`
    /// among policy-valid ready messages.
    pub fn peek(&self, now: u64, control_priority: bool) -> Option<(u64, u64, usize)> {
        let mut best: Option<(u64, u64, usize)> = None;
        for (idx, m) in self.in_flight.iter().enumerate() {
            if m.ready_at > now || !self.valid(idx, control_priority) {
                continue;
            }
            let key = (m.ready_at, m.msg.seq, idx);
            if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
        best
    }

    pub fn deliver(&mut self, idx: usize) -> Message {
        for older in &mut self.in_flight[..idx] {
            older.overtaken += 1;
            self.max_overtaken_seen = self.max_overtaken_seen.max(older.overtaken);
        }
        self.in_flight.remove(idx).msg
    }
}
