use std::fmt;

/// Event classes recorded by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventType {
    Send,
    Deliver,
    Update,
    Snapshot,
    Reduce,
}

impl EventType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::Send => "send",
            EventType::Deliver => "deliver",
            EventType::Update => "update",
            EventType::Snapshot => "snapshot",
            EventType::Reduce => "reduce",
        }
    }
}

/// Message-kind column of the log; `None` for non-message events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KindTag {
    Comp,
    Marker,
    Flag,
    None,
}

impl KindTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            KindTag::Comp => "comp",
            KindTag::Marker => "marker",
            KindTag::Flag => "flag",
            KindTag::None => "-",
        }
    }
}

/// One log line: `time type src dst kind seq`.
///
/// For updates and snapshot returns, `src == dst` is the process and `seq`
/// carries the local update count or the epoch. For reductions both
/// endpoints are absent and `seq` numbers the reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time: u64,
    pub etype: EventType,
    pub src: Option<usize>,
    pub dst: Option<usize>,
    pub kind: KindTag,
    pub seq: u64,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn endpoint(e: Option<usize>) -> String {
            e.map_or_else(|| "-".to_string(), |p| p.to_string())
        }
        write!(
            f,
            "{} {} {} {} {} {}",
            self.time,
            self.etype.as_str(),
            endpoint(self.src),
            endpoint(self.dst),
            self.kind.as_str(),
            self.seq
        )
    }
}

/// Append-only event log; one record per simulator event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, r: EventRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_lines(&self) -> Vec<String> {
        self.records.iter().map(|r| r.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_is_stable() {
        let r = EventRecord {
            time: 12,
            etype: EventType::Send,
            src: Some(0),
            dst: Some(1),
            kind: KindTag::Comp,
            seq: 3,
        };
        assert_eq!(r.to_string(), "12 send 0 1 comp 3");
        let r = EventRecord {
            time: 40,
            etype: EventType::Reduce,
            src: None,
            dst: None,
            kind: KindTag::None,
            seq: 0,
        };
        assert_eq!(r.to_string(), "40 reduce - - - 0");
    }
}
