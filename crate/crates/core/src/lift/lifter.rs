use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::action::*;
use super::slots::SlotAllocator;
use crate::flow::{is_pure_ack, CloseTracker, Endpoint, FlowKey, IDLE_TIMEOUT_US};
use crate::packet::{CanonicalPacket, Proto, TcpFields, TcpFlags, TcpOptProfile, Transport};

pub const DEFAULT_SLOTS: u32 = 4096;
/// Slot tokens occupy 16 bits of the flow-table message word.
pub const MAX_SLOTS: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftConfig {
    /// Active-flow vocabulary size V.
    pub slots: u32,
    /// Idle gap after which a non-TCP episode releases its slot.
    pub idle_timeout_us: u64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            slots: DEFAULT_SLOTS,
            idle_timeout_us: IDLE_TIMEOUT_US,
        }
    }
}

impl LiftConfig {
    /// Short stable digest of the configuration, recorded in action-file headers.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LiftError {
    #[error("slot vocabulary size must be in 1..={MAX_SLOTS}, got {0}")]
    BadSlots(u32),
    #[error("packet {index} at {ts_us} us precedes its predecessor")]
    OutOfOrder { index: usize, ts_us: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftReport {
    pub packets: u64,
    pub flows_opened: u64,
    /// Bindings of a slot that had been bound before.
    pub slot_reuses: u64,
    pub evictions: u64,
    pub idle_releases: u64,
    pub close_releases: u64,
}

#[derive(Debug, Clone)]
pub struct LiftOutput {
    pub header: ActionHeader,
    pub actions: Vec<ActionRecord>,
    pub report: LiftReport,
}

/// Precedence RST > SYN+ACK > SYN > FIN > data > ack.
pub fn classify_tcp_ctrl(flags: TcpFlags, payload_len: u16) -> TcpCtrl {
    if flags.rst() {
        TcpCtrl::Rst
    } else if flags.syn() && flags.ack() {
        TcpCtrl::Synack
    } else if flags.syn() {
        TcpCtrl::Syn
    } else if flags.fin() {
        TcpCtrl::Fin
    } else if payload_len > 0 {
        TcpCtrl::Data
    } else {
        TcpCtrl::Ack
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct DirSeq {
    /// Reference point for relative sequence numbers. Set by the first segment from this
    /// side, or earlier by the peer's ACK when this side has not been seen yet.
    base: Option<u32>,
    next: u32,
    /// Last ACK value sent by this side.
    ack_ref: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TcpDetail {
    sign: SeqSign,
    seq_mag: u32,
    ack_adv: u32,
    ack_unseen: bool,
}

const NEUTRAL_TCP: TcpDetail = TcpDetail {
    sign: SeqSign::Nonneg,
    seq_mag: 0,
    ack_adv: 0,
    ack_unseen: false,
};

fn serial_gt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

#[derive(Debug, Clone, Default)]
struct TcpLift {
    dirs: [DirSeq; 2],
}

impl TcpLift {
    fn step(&mut self, dir: Dir, t: &TcpFields, payload_len: u16) -> TcpDetail {
        let d = dir.index();
        let p = dir.peer().index();

        let me = &mut self.dirs[d];
        if me.base.is_none() {
            me.base = Some(t.seq);
            me.next = t.seq;
        }
        let delta = t.seq.wrapping_sub(me.next) as i32;
        let advance = u32::from(payload_len) + u32::from(t.flags.syn()) + u32::from(t.flags.fin());
        let end = t.seq.wrapping_add(advance);
        if serial_gt(end, me.next) {
            me.next = end;
        }

        let (ack_adv, ack_unseen) = if t.flags.ack() {
            let anchored = self.dirs[p].base.is_none();
            if anchored {
                self.dirs[p].base = Some(t.ack);
                self.dirs[p].next = t.ack;
            }
            let peer_base = self.dirs[p].base.unwrap_or(t.ack);
            let peer_next = self.dirs[p].next;
            let reference = self.dirs[d].ack_ref.unwrap_or(peer_base);
            self.dirs[d].ack_ref = Some(t.ack);
            (
                t.ack.wrapping_sub(reference),
                anchored || serial_gt(t.ack, peer_next),
            )
        } else {
            (0, false)
        };

        TcpDetail {
            sign: if delta < 0 {
                SeqSign::Neg
            } else {
                SeqSign::Nonneg
            },
            seq_mag: delta.unsigned_abs(),
            ack_adv,
            ack_unseen,
        }
    }
}

#[derive(Debug, Clone)]
struct Episode {
    slot: u32,
    generation: u32,
    initiator: Endpoint,
    proto: Proto,
    pkt_count: u64,
    last_ts: u64,
    last_payload_len: u16,
    ack_streak: u64,
    last_dir: Option<Dir>,
    tcp: TcpLift,
    tracker: CloseTracker,
}

/// Streaming lifter. Feed packets in timestamp order with [`Lifter::push`].
#[derive(Debug)]
pub struct Lifter {
    config: LiftConfig,
    alloc: SlotAllocator,
    episodes: HashMap<FlowKey, Episode>,
    /// Non-TCP episodes ordered by last activity, for idle release.
    idle_order: BTreeSet<(u64, u32)>,
    prev_ts: Option<u64>,
    first_ts: Option<u64>,
    report: LiftReport,
}

impl Lifter {
    pub fn new(config: LiftConfig) -> Result<Self, LiftError> {
        if config.slots == 0 || config.slots > MAX_SLOTS {
            return Err(LiftError::BadSlots(config.slots));
        }
        Ok(Self {
            alloc: SlotAllocator::new(config.slots),
            config,
            episodes: HashMap::new(),
            idle_order: BTreeSet::new(),
            prev_ts: None,
            first_ts: None,
            report: LiftReport::default(),
        })
    }

    fn release(&mut self, key: &FlowKey) {
        if let Some(ep) = self.episodes.remove(key) {
            self.alloc.release(ep.slot);
            self.idle_order.remove(&(ep.last_ts, ep.slot));
        }
    }

    fn expire_idle(&mut self, now: u64) {
        while let Some(&(last, slot)) = self.idle_order.first() {
            if now.saturating_sub(last) <= self.config.idle_timeout_us {
                break;
            }
            let key = *self
                .alloc
                .key_of(slot)
                .expect("idle entry refers to a bound slot");
            self.release(&key);
            self.report.idle_releases += 1;
        }
    }

    fn open(&mut self, key: FlowKey, initiator: Endpoint, ts: u64) {
        let b = self.alloc.bind(key, ts);
        if let Some(old) = b.evicted {
            if let Some(ep) = self.episodes.remove(&old) {
                self.idle_order.remove(&(ep.last_ts, ep.slot));
            }
            self.report.evictions += 1;
        }
        if b.generation > 0 {
            self.report.slot_reuses += 1;
        }
        self.report.flows_opened += 1;
        self.episodes.insert(
            key,
            Episode {
                slot: b.slot,
                generation: b.generation,
                initiator,
                proto: key.proto,
                pkt_count: 0,
                last_ts: ts,
                last_payload_len: 0,
                ack_streak: 0,
                last_dir: None,
                tcp: TcpLift::default(),
                tracker: CloseTracker::new(),
            },
        );
    }

    pub fn push(&mut self, pkt: &CanonicalPacket) -> Result<ActionRecord, LiftError> {
        let ts = pkt.ts_us;
        if self.prev_ts.is_some_and(|p| ts < p) {
            return Err(LiftError::OutOfOrder {
                index: self.report.packets as usize,
                ts_us: ts,
            });
        }
        let delta_t_us = self.prev_ts.map_or(0, |p| ts - p);
        self.prev_ts = Some(ts);
        self.first_ts.get_or_insert(ts);
        self.report.packets += 1;

        self.expire_idle(ts);

        let (key, src) = FlowKey::of(pkt);
        let tcp = pkt.tcp().copied();
        if let (Some(ep), Some(t)) = (self.episodes.get(&key), tcp.as_ref()) {
            if !ep.tracker.admits(t.flags, pkt.payload_len) {
                self.release(&key);
            }
        }
        if !self.episodes.contains_key(&key) {
            self.open(key, src, ts);
        }
        let ep = self.episodes.get_mut(&key).expect("episode just ensured");

        let dir = if src == ep.initiator {
            Dir::AToB
        } else {
            Dir::BToA
        };
        let first = ep.pkt_count == 0;
        let gap = if first { 0 } else { ts - ep.last_ts };

        let (tcp_ctrl, detail, profile, window) = match &tcp {
            Some(t) => (
                classify_tcp_ctrl(t.flags, pkt.payload_len),
                ep.tcp.step(dir, t, pkt.payload_len),
                t.options,
                t.window,
            ),
            None => (TcpCtrl::None, NEUTRAL_TCP, TcpOptProfile::None, 0),
        };

        let mut close = false;
        if let Some(t) = &tcp {
            let had_both_fins = ep.tracker.both_fins();
            ep.tracker
                .observe(dir == Dir::AToB, t.flags, pkt.payload_len);
            close = t.flags.rst() || (t.flags.fin() && !had_both_fins && ep.tracker.both_fins());
        }
        let flow_evt = if first {
            FlowEvt::Open
        } else if close {
            FlowEvt::Close
        } else {
            FlowEvt::Continue
        };

        let (icmp_type, icmp_code) = match &pkt.transport {
            Transport::Icmp(i) => (i.icmp_type, i.icmp_code),
            _ => (0, 0),
        };

        let action = ActionRecord {
            flow_token: ep.slot,
            generation: ep.generation,
            flow_evt,
            proto: ep.proto,
            ip_family: pkt.ip_family(),
            dir,
            tcp_ctrl,
            tcp_opt_profile: profile,
            tcp_win_d: digits4(window),
            tcp_ack_adv_d: digits8(detail.ack_adv),
            tcp_ack_unseen: detail.ack_unseen,
            tcp_seq_delta_sign: detail.sign,
            tcp_seq_delta_d: digits8(detail.seq_mag),
            ttl_res: ttl_residual(pkt.ttl),
            icmp_type,
            icmp_code,
            l4_payload_len_d: digits4(pkt.payload_len),
            ctx_gap_b: bucketize(BucketKind::Gap, gap),
            ctx_pkt_count_b: bucketize(BucketKind::PktCount, ep.pkt_count),
            ctx_last_payload_b: bucketize(BucketKind::Payload, u64::from(ep.last_payload_len)),
            ctx_ack_streak_b: bucketize(BucketKind::AckStreak, ep.ack_streak),
            ctx_last_dir: ep.last_dir.map_or(LastDir::None, LastDir::from),
            delta_t_us,
        };

        let prev_last = ep.last_ts;
        ep.pkt_count += 1;
        ep.last_ts = ts;
        ep.last_payload_len = pkt.payload_len;
        ep.last_dir = Some(dir);
        ep.ack_streak = match &tcp {
            Some(t) if is_pure_ack(t.flags, pkt.payload_len) => ep.ack_streak + 1,
            _ => 0,
        };
        let slot = ep.slot;
        let closed = ep.tracker.is_closed();
        let is_tcp = ep.proto == Proto::Tcp;

        self.alloc.touch(slot, ts);
        if !is_tcp {
            self.idle_order.remove(&(prev_last, slot));
            self.idle_order.insert((ts, slot));
        }
        if closed {
            self.release(&key);
            self.report.close_releases += 1;
        }
        Ok(action)
    }

    pub fn header(&self) -> ActionHeader {
        ActionHeader {
            schema_version: SCHEMA_VERSION,
            slots: self.config.slots,
            config_hash: self.config.config_hash(),
            epoch_us: self.first_ts.unwrap_or(0),
        }
    }

    pub fn report(&self) -> &LiftReport {
        &self.report
    }
}

/// Lifts a whole packet sequence.
pub fn lift_trace(
    packets: &[CanonicalPacket],
    config: &LiftConfig,
) -> Result<LiftOutput, LiftError> {
    let mut lifter = Lifter::new(config.clone())?;
    let actions = packets
        .iter()
        .map(|p| lifter.push(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LiftOutput {
        header: lifter.header(),
        report: lifter.report.clone(),
        actions,
    })
}
