//! Bidirectional flow keys and the TCP close tracker.
//!
//! The lifter's episode boundaries and the sessionizer's session boundaries both come from
//! this module, so a lifted-and-recompiled trace splits into sessions exactly where the
//! original did.

use std::net::IpAddr;

use crate::packet::{CanonicalPacket, IcmpFields, IpFamily, Proto, TcpFlags, Transport};

/// Idle gap after which a session (or non-TCP episode) ends. A gap of exactly this length
/// does not split.
pub const IDLE_TIMEOUT_US: u64 = 60_000_000;

/// ICMP grouping class: echo request/reply share one class, other types key by type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IcmpClass {
    Echo,
    Type(u8),
}

impl IcmpClass {
    pub fn of(family: IpFamily, icmp: &IcmpFields) -> Self {
        match (family, icmp.icmp_type) {
            (IpFamily::V4, 0 | 8) | (IpFamily::V6, 128 | 129) => IcmpClass::Echo,
            (_, t) => IcmpClass::Type(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

/// Direction-free flow identity: endpoints stored in sorted order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub proto: Proto,
    pub lo: Endpoint,
    pub hi: Endpoint,
    pub icmp_class: Option<IcmpClass>,
}

impl FlowKey {
    /// Key of a packet plus its source endpoint.
    pub fn of(pkt: &CanonicalPacket) -> (FlowKey, Endpoint) {
        let (sport, dport) = pkt.ports().unwrap_or((0, 0));
        let src = Endpoint {
            ip: pkt.src_ip,
            port: sport,
        };
        let dst = Endpoint {
            ip: pkt.dst_ip,
            port: dport,
        };
        let (lo, hi) = if src <= dst { (src, dst) } else { (dst, src) };
        let icmp_class = match &pkt.transport {
            Transport::Icmp(i) => Some(IcmpClass::of(pkt.ip_family(), i)),
            _ => None,
        };
        (
            FlowKey {
                proto: pkt.proto(),
                lo,
                hi,
                icmp_class,
            },
            src,
        )
    }
}

/// A pure ACK: ACK set, no SYN/FIN/RST, no payload.
pub fn is_pure_ack(flags: TcpFlags, payload_len: u16) -> bool {
    flags.ack() && !flags.syn() && !flags.fin() && !flags.rst() && payload_len == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Open,
    /// FIN seen from both sides; one trailing pure ACK may still join.
    Closing,
    ClosedByFin,
    ClosedByRst,
}

/// How a TCP conversation ended, as far as the tracker knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpEnd {
    Fin,
    Rst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CloseTracker {
    fin_initiator: bool,
    fin_responder: bool,
    phase: Phase,
}

impl Default for CloseTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl CloseTracker {
    pub fn new() -> Self {
        Self {
            fin_initiator: false,
            fin_responder: false,
            phase: Phase::Open,
        }
    }

    /// Whether the packet still belongs to the current conversation.
    pub fn admits(&self, flags: TcpFlags, payload_len: u16) -> bool {
        match self.phase {
            Phase::Open => true,
            Phase::Closing => is_pure_ack(flags, payload_len),
            Phase::ClosedByFin | Phase::ClosedByRst => false,
        }
    }

    /// Records an admitted packet. `from_initiator` is relative to the conversation's first
    /// sender.
    pub fn observe(&mut self, from_initiator: bool, flags: TcpFlags, payload_len: u16) {
        match self.phase {
            Phase::Closing if is_pure_ack(flags, payload_len) => {
                self.phase = Phase::ClosedByFin;
                return;
            }
            Phase::ClosedByFin | Phase::ClosedByRst => return,
            _ => {}
        }
        if flags.rst() {
            self.phase = Phase::ClosedByRst;
            return;
        }
        if flags.fin() {
            if from_initiator {
                self.fin_initiator = true;
            } else {
                self.fin_responder = true;
            }
            if self.fin_initiator && self.fin_responder {
                self.phase = Phase::Closing;
            }
        }
    }

    /// True once no further packet can join.
    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::ClosedByFin | Phase::ClosedByRst)
    }

    /// True once both FINs have been seen (closing or closed by FIN).
    pub fn both_fins(&self) -> bool {
        self.fin_initiator && self.fin_responder
    }

    pub fn end(&self) -> Option<TcpEnd> {
        match self.phase {
            Phase::ClosedByRst => Some(TcpEnd::Rst),
            Phase::Closing | Phase::ClosedByFin => Some(TcpEnd::Fin),
            Phase::Open => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fin_fin_ack_closes() {
        let mut t = CloseTracker::new();
        let fa = TcpFlags::FIN | TcpFlags::ACK;
        t.observe(true, fa, 0);
        assert!(!t.is_closed());
        t.observe(false, fa, 0);
        assert!(!t.is_closed());
        assert!(t.admits(TcpFlags::ACK, 0));
        assert!(!t.admits(TcpFlags::SYN, 0));
        t.observe(true, TcpFlags::ACK, 0);
        assert!(t.is_closed());
        assert_eq!(t.end(), Some(TcpEnd::Fin));
    }

    #[test]
    fn rst_closes_immediately() {
        let mut t = CloseTracker::new();
        t.observe(false, TcpFlags::RST | TcpFlags::ACK, 0);
        assert!(t.is_closed());
        assert!(!t.admits(TcpFlags::ACK, 0));
        assert_eq!(t.end(), Some(TcpEnd::Rst));
    }

    #[test]
    fn repeated_fin_from_one_side_keeps_open() {
        let mut t = CloseTracker::new();
        t.observe(true, TcpFlags::FIN | TcpFlags::ACK, 0);
        t.observe(true, TcpFlags::FIN | TcpFlags::ACK, 0);
        assert!(t.admits(TcpFlags::ACK | TcpFlags::PSH, 10));
        assert_eq!(t.end(), None);
    }

    #[test]
    fn icmp_echo_pairs_share_class() {
        let req = IcmpFields {
            icmp_type: 8,
            icmp_code: 0,
        };
        let rep = IcmpFields {
            icmp_type: 0,
            icmp_code: 0,
        };
        assert_eq!(
            IcmpClass::of(IpFamily::V4, &req),
            IcmpClass::of(IpFamily::V4, &rep)
        );
        let req6 = IcmpFields {
            icmp_type: 128,
            icmp_code: 0,
        };
        assert_eq!(IcmpClass::of(IpFamily::V6, &req6), IcmpClass::Echo);
        let unreach = IcmpFields {
            icmp_type: 3,
            icmp_code: 1,
        };
        assert_eq!(IcmpClass::of(IpFamily::V4, &unreach), IcmpClass::Type(3));
    }
}
