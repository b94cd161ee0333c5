use std::collections::HashMap;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use super::session::Sessionization;
use crate::flow::is_pure_ack;
use crate::packet::CanonicalPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcpEvent {
    Retransmission,
    FastRetransmission,
    SpuriousRetransmission,
    LostSegment,
    AckedLostSegment,
    DuplicateAck,
    OutOfOrder,
    ZeroWindow,
}

impl TcpEvent {
    pub const ALL: [TcpEvent; 8] = [
        TcpEvent::Retransmission,
        TcpEvent::FastRetransmission,
        TcpEvent::SpuriousRetransmission,
        TcpEvent::LostSegment,
        TcpEvent::AckedLostSegment,
        TcpEvent::DuplicateAck,
        TcpEvent::OutOfOrder,
        TcpEvent::ZeroWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TcpEvent::Retransmission => "retransmission",
            TcpEvent::FastRetransmission => "fast_retransmission",
            TcpEvent::SpuriousRetransmission => "spurious_retransmission",
            TcpEvent::LostSegment => "lost_segment",
            TcpEvent::AckedLostSegment => "acked_lost_segment",
            TcpEvent::DuplicateAck => "duplicate_ack",
            TcpEvent::OutOfOrder => "out_of_order",
            TcpEvent::ZeroWindow => "zero_window",
        }
    }
}

/// Counts of the eight diagnostic events plus the TCP packet count they are normalized by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcpEventCounts {
    pub retransmission: u64,
    pub fast_retransmission: u64,
    pub spurious_retransmission: u64,
    pub lost_segment: u64,
    pub acked_lost_segment: u64,
    pub duplicate_ack: u64,
    pub out_of_order: u64,
    pub zero_window: u64,
    pub n_tcp: u64,
}

impl Index<TcpEvent> for TcpEventCounts {
    type Output = u64;
    fn index(&self, e: TcpEvent) -> &u64 {
        match e {
            TcpEvent::Retransmission => &self.retransmission,
            TcpEvent::FastRetransmission => &self.fast_retransmission,
            TcpEvent::SpuriousRetransmission => &self.spurious_retransmission,
            TcpEvent::LostSegment => &self.lost_segment,
            TcpEvent::AckedLostSegment => &self.acked_lost_segment,
            TcpEvent::DuplicateAck => &self.duplicate_ack,
            TcpEvent::OutOfOrder => &self.out_of_order,
            TcpEvent::ZeroWindow => &self.zero_window,
        }
    }
}

impl IndexMut<TcpEvent> for TcpEventCounts {
    fn index_mut(&mut self, e: TcpEvent) -> &mut u64 {
        match e {
            TcpEvent::Retransmission => &mut self.retransmission,
            TcpEvent::FastRetransmission => &mut self.fast_retransmission,
            TcpEvent::SpuriousRetransmission => &mut self.spurious_retransmission,
            TcpEvent::LostSegment => &mut self.lost_segment,
            TcpEvent::AckedLostSegment => &mut self.acked_lost_segment,
            TcpEvent::DuplicateAck => &mut self.duplicate_ack,
            TcpEvent::OutOfOrder => &mut self.out_of_order,
            TcpEvent::ZeroWindow => &mut self.zero_window,
        }
    }
}

impl TcpEventCounts {
    pub fn add(&mut self, other: &TcpEventCounts) {
        for e in TcpEvent::ALL {
            self[e] += other[e];
        }
        self.n_tcp += other.n_tcp;
    }

    /// Per-event rates `c_a / max(N_tcp, 1)`.
    pub fn rates(&self) -> [f64; 8] {
        let n = self.n_tcp.max(1) as f64;
        TcpEvent::ALL.map(|e| self[e] as f64 / n)
    }

    /// Parses counts produced by an external analyzer. Keys are the event names plus `n_tcp`;
    /// missing events count as zero.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct External {
            #[serde(default)]
            retransmission: u64,
            #[serde(default)]
            fast_retransmission: u64,
            #[serde(default)]
            spurious_retransmission: u64,
            #[serde(default)]
            lost_segment: u64,
            #[serde(default)]
            acked_lost_segment: u64,
            #[serde(default)]
            duplicate_ack: u64,
            #[serde(default)]
            out_of_order: u64,
            #[serde(default)]
            zero_window: u64,
            n_tcp: u64,
        }
        let e: External = serde_json::from_str(text)?;
        Ok(Self {
            retransmission: e.retransmission,
            fast_retransmission: e.fast_retransmission,
            spurious_retransmission: e.spurious_retransmission,
            lost_segment: e.lost_segment,
            acked_lost_segment: e.acked_lost_segment,
            duplicate_ack: e.duplicate_ack,
            out_of_order: e.out_of_order,
            zero_window: e.zero_window,
            n_tcp: e.n_tcp,
        })
    }
}

/// Profile distance in percentage points.
pub fn tcp_event_distance_pp(reference: &TcpEventCounts, decoded: &TcpEventCounts) -> f64 {
    let (r, d) = (reference.rates(), decoded.rates());
    r.iter()
        .zip(d.iter())
        .map(|(a, b)| (b - a).abs())
        .sum::<f64>()
        * 100.0
}

/// How many session packets may pass between a gap opening and the segment filling it for
/// the fill to count as reordering.
pub const REORDER_WINDOW: usize = 3;
/// Duplicate ACKs from the receiver that make the next retransmission "fast".
pub const FAST_RETRANS_DUPACKS: u64 = 3;

fn serial_gt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

fn serial_ge(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) >= 0
}

#[derive(Debug, Clone, Copy)]
struct Gap {
    start: u32,
    end: u32,
    opened_at: usize,
}

#[derive(Debug, Clone, Default)]
struct DirDiag {
    max_end: Option<u32>,
    highest_ack: Option<u32>,
    last_ack: Option<(u32, u16)>,
    dup_streak: u64,
    gaps: Vec<Gap>,
}

impl DirDiag {
    /// Removes the part of every open gap covered by `[start, end)`; returns whether any
    /// gap opened recently enough was touched.
    fn fill(&mut self, start: u32, end: u32, now: usize) -> bool {
        let mut recent = false;
        let mut kept = Vec::with_capacity(self.gaps.len());
        for g in self.gaps.drain(..) {
            let overlaps = serial_gt(end, g.start) && serial_gt(g.end, start);
            if !overlaps {
                kept.push(g);
                continue;
            }
            recent |= now - g.opened_at <= REORDER_WINDOW;
            if serial_gt(start, g.start) {
                kept.push(Gap { end: start, ..g });
            }
            if serial_gt(g.end, end) {
                kept.push(Gap { start: end, ..g });
            }
        }
        self.gaps = kept;
        recent
    }
}

#[derive(Debug, Default)]
struct SessionDiag {
    dirs: [DirDiag; 2],
    packets: usize,
}

/// Runs the diagnostic rules over every TCP session of a trace.
pub fn tcp_diagnostics(packets: &[CanonicalPacket], sessions: &Sessionization) -> TcpEventCounts {
    let mut counts = TcpEventCounts::default();
    let mut state: HashMap<usize, SessionDiag> = HashMap::new();
    for (i, pkt) in packets.iter().enumerate() {
        let Some(t) = pkt.tcp() else { continue };
        counts.n_tcp += 1;
        let sd = state.entry(sessions.labels[i]).or_default();
        let now = sd.packets;
        sd.packets += 1;
        let (d, p) = if sessions.from_initiator[i] {
            (0, 1)
        } else {
            (1, 0)
        };
        let len = u32::from(pkt.payload_len);

        if t.window == 0 && !t.flags.syn() && !t.flags.rst() {
            counts.zero_window += 1;
        }

        let advance = len + u32::from(t.flags.syn()) + u32::from(t.flags.fin());
        let end = t.seq.wrapping_add(len);
        if len > 0 {
            if let Some(max_end) = sd.dirs[d].max_end {
                if serial_ge(max_end, end) {
                    let peer = &sd.dirs[p];
                    let event = if peer.highest_ack.is_some_and(|a| serial_ge(a, end)) {
                        TcpEvent::SpuriousRetransmission
                    } else if peer.dup_streak >= FAST_RETRANS_DUPACKS
                        && peer.last_ack.is_some_and(|(a, _)| a == t.seq)
                    {
                        TcpEvent::FastRetransmission
                    } else if sd.dirs[d].fill(t.seq, end, now) {
                        TcpEvent::OutOfOrder
                    } else {
                        TcpEvent::Retransmission
                    };
                    if event != TcpEvent::OutOfOrder {
                        sd.dirs[d].fill(t.seq, end, now);
                    }
                    counts[event] += 1;
                } else if serial_gt(t.seq, max_end) {
                    counts.lost_segment += 1;
                    sd.dirs[d].gaps.push(Gap {
                        start: max_end,
                        end: t.seq,
                        opened_at: now,
                    });
                }
            }
        }
        let me = &mut sd.dirs[d];
        let seg_end = t.seq.wrapping_add(advance);
        if me.max_end.is_none_or(|m| serial_gt(seg_end, m)) {
            me.max_end = Some(seg_end);
        }

        if t.flags.ack() {
            if sd.dirs[p].max_end.is_some_and(|m| serial_gt(t.ack, m)) {
                counts.acked_lost_segment += 1;
            }
            let me = &mut sd.dirs[d];
            let pure = is_pure_ack(t.flags, pkt.payload_len);
            let repeat = me.last_ack == Some((t.ack, t.window));
            if pure && repeat {
                counts.duplicate_ack += 1;
                me.dup_streak += 1;
            } else if me.last_ack.is_none_or(|(a, _)| a != t.ack) {
                me.dup_streak = 0;
            }
            me.last_ack = Some((t.ack, t.window));
            if me.highest_ack.is_none_or(|h| serial_gt(t.ack, h)) {
                me.highest_ack = Some(t.ack);
            }
        }
    }
    counts
}
