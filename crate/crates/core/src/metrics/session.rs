use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flow::{CloseTracker, Endpoint, FlowKey, TcpEnd, IDLE_TIMEOUT_US};
use crate::packet::CanonicalPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Fin,
    Rst,
    Idle,
    TraceEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub key: FlowKey,
    /// First sender of the session.
    pub initiator: Endpoint,
    pub start_ts_us: u64,
    pub end_ts_us: u64,
    pub packets: u64,
    /// Wire bytes sent by the initiator and by the responder.
    pub bytes: [u64; 2],
    pub close_reason: CloseReason,
}

impl SessionRecord {
    pub fn duration_us(&self) -> u64 {
        self.end_ts_us - self.start_ts_us
    }
}

impl fmt::Display for SessionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = &self.key;
        write!(
            f,
            "{:?} {}:{} <-> {}:{}",
            k.proto, k.lo.ip, k.lo.port, k.hi.ip, k.hi.port
        )
    }
}

/// Sessions plus, for every input packet, its session index and whether the initiator sent it.
#[derive(Debug, Clone, Default)]
pub struct Sessionization {
    pub sessions: Vec<SessionRecord>,
    pub labels: Vec<usize>,
    pub from_initiator: Vec<bool>,
}

struct Open {
    index: usize,
    tracker: CloseTracker,
}

fn end_reason(tracker: &CloseTracker) -> Option<CloseReason> {
    tracker.end().map(|e| match e {
        TcpEnd::Fin => CloseReason::Fin,
        TcpEnd::Rst => CloseReason::Rst,
    })
}

/// Groups time-ordered packets into bidirectional transport sessions. TCP sessions close at
/// RST or after FINs from both sides plus the closing ACK; every protocol splits on an idle
/// gap longer than [`IDLE_TIMEOUT_US`].
pub fn sessionize(packets: &[CanonicalPacket]) -> Sessionization {
    let mut out = Sessionization {
        labels: Vec::with_capacity(packets.len()),
        from_initiator: Vec::with_capacity(packets.len()),
        ..Default::default()
    };
    let mut open: HashMap<FlowKey, Open> = HashMap::new();

    for pkt in packets {
        let (key, src) = FlowKey::of(pkt);
        let tcp = pkt.tcp();
        if let Some(o) = open.get(&key) {
            let s = &mut out.sessions[o.index];
            let idle = pkt.ts_us.saturating_sub(s.end_ts_us) > IDLE_TIMEOUT_US;
            let rejected = tcp.is_some_and(|t| !o.tracker.admits(t.flags, pkt.payload_len));
            if idle || rejected {
                s.close_reason = end_reason(&o.tracker).unwrap_or(CloseReason::Idle);
                open.remove(&key);
            }
        }
        let o = open.entry(key).or_insert_with(|| {
            out.sessions.push(SessionRecord {
                key,
                initiator: src,
                start_ts_us: pkt.ts_us,
                end_ts_us: pkt.ts_us,
                packets: 0,
                bytes: [0; 2],
                close_reason: CloseReason::TraceEnd,
            });
            Open {
                index: out.sessions.len() - 1,
                tracker: CloseTracker::new(),
            }
        });
        let s = &mut out.sessions[o.index];
        let fwd = src == s.initiator;
        s.end_ts_us = pkt.ts_us;
        s.packets += 1;
        s.bytes[usize::from(!fwd)] += pkt.wire_len() as u64;
        out.labels.push(o.index);
        out.from_initiator.push(fwd);
        if let Some(t) = tcp {
            o.tracker.observe(fwd, t.flags, pkt.payload_len);
            if o.tracker.is_closed() {
                s.close_reason = end_reason(&o.tracker).expect("closed tracker has an end");
                open.remove(&key);
            }
        }
    }
    for o in open.values() {
        if let Some(r) = end_reason(&o.tracker) {
            out.sessions[o.index].close_reason = r;
        }
    }
    out
}
