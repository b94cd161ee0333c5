//! Legality checks for rendered traces: decodability, checksums, TCP flag sets and
//! per-session sequence/acknowledgement consistency.

use std::collections::HashMap;
use std::net::IpAddr;

use serde::Serialize;

use crate::flow::FlowKey;
use crate::metrics::sessionize;
use crate::packet::{decode_frame, verify_checksums, CanonicalPacket, ChecksumFault, TcpFlags};
use crate::pcap::Frame;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ViolationKind {
    Undecodable,
    Checksum { fault: ChecksumFault },
    IllegalFlags { flags: u8 },
    PshWithoutPayload,
    ControlWithPayload,
    SynSeqChanged,
    SeqBeforeIsn,
    AckBeyondPeer,
    AfterRst,
    NonPrivateAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Record index in the capture.
    pub index: usize,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub tcp_packets: usize,
    pub exempted_acks: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOptions<'a> {
    /// Per-record flag: the source action marked its acknowledgement as covering unseen bytes.
    pub ack_unseen: Option<&'a [bool]>,
    /// Require every address to lie in 10.0.0.0/8 or fd00::/8.
    pub require_private: bool,
}

fn legal_flag_set(f: TcpFlags) -> bool {
    use TcpFlags as F;
    [
        F::SYN,
        F::SYN | F::ACK,
        F::FIN | F::ACK,
        F::FIN | F::ACK | F::PSH,
        F::RST,
        F::RST | F::ACK,
        F::ACK,
        F::ACK | F::PSH,
    ]
    .contains(&f)
}

pub fn is_synthetic_address(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V4(a) => a.octets()[0] == 10,
        IpAddr::V6(a) => a.octets()[0] == 0xfd,
    }
}

fn serial_gt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

#[derive(Debug, Default, Clone, Copy)]
struct DirCheck {
    syn_seq: Option<u32>,
    started: bool,
    max_end: Option<u32>,
}

pub fn validate(frames: &[Frame], opts: &ValidateOptions<'_>) -> ValidationReport {
    let mut report = ValidationReport {
        records: frames.len(),
        ..Default::default()
    };
    let mut packets: Vec<CanonicalPacket> = Vec::with_capacity(frames.len());
    let mut index_of: Vec<usize> = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        match decode_frame(&f.data, f.ts_us).packet() {
            Some(p) => {
                if let Err(fault) = verify_checksums(&f.data) {
                    report.violations.push(Violation {
                        index: i,
                        kind: ViolationKind::Checksum { fault },
                    });
                }
                packets.push(p);
                index_of.push(i);
            }
            None => report.violations.push(Violation {
                index: i,
                kind: ViolationKind::Undecodable,
            }),
        }
    }

    let sz = sessionize(&packets);
    let mut dirs: HashMap<usize, [DirCheck; 2]> = HashMap::new();
    let mut after_rst: HashMap<FlowKey, bool> = HashMap::new();

    for (k, pkt) in packets.iter().enumerate() {
        let index = index_of[k];
        let mut flag = |kind| report.violations.push(Violation { index, kind });
        if opts.require_private
            && !(is_synthetic_address(&pkt.src_ip) && is_synthetic_address(&pkt.dst_ip))
        {
            flag(ViolationKind::NonPrivateAddress);
        }
        let Some(t) = pkt.tcp() else { continue };
        report.tcp_packets += 1;
        let f = t.flags;
        if !legal_flag_set(f) {
            flag(ViolationKind::IllegalFlags { flags: f.bits() });
        }
        if f.contains(TcpFlags::PSH) && pkt.payload_len == 0 {
            flag(ViolationKind::PshWithoutPayload);
        }
        if (f.syn() || f.rst()) && pkt.payload_len > 0 {
            flag(ViolationKind::ControlWithPayload);
        }

        let (key, _) = FlowKey::of(pkt);
        let prev_rst = after_rst.insert(key, f.rst()).unwrap_or(false);
        if prev_rst && !(f.syn() && !f.ack()) {
            flag(ViolationKind::AfterRst);
        }

        let (d, p) = if sz.from_initiator[k] { (0, 1) } else { (1, 0) };
        let st = dirs.entry(sz.labels[k]).or_default();
        let me = &mut st[d];
        if !me.started && f.syn() {
            me.syn_seq = Some(t.seq);
        }
        me.started = true;
        if let Some(s) = me.syn_seq {
            if f.syn() && t.seq != s {
                flag(ViolationKind::SynSeqChanged);
            } else if serial_gt(s, t.seq) {
                flag(ViolationKind::SeqBeforeIsn);
            }
        }
        let adv = u32::from(pkt.payload_len) + u32::from(f.syn()) + u32::from(f.fin());
        let end = t.seq.wrapping_add(adv);
        if me.max_end.is_none_or(|m| serial_gt(end, m)) {
            me.max_end = Some(end);
        }
        if f.ack() {
            if let Some(peer_end) = st[p].max_end {
                if serial_gt(t.ack, peer_end) {
                    let exempt = opts
                        .ack_unseen
                        .and_then(|u| u.get(index))
                        .copied()
                        .unwrap_or(false);
                    if exempt {
                        report.exempted_acks += 1;
                    } else {
                        flag(ViolationKind::AckBeyondPeer);
                    }
                }
            }
        }
    }
    report.violations.sort_by_key(|v| v.index);
    report
}
