//! Hand-built packet sequences for sessionization and diagnostics checks.

use std::net::IpAddr;

use pktact::metrics::TcpEvent;
use pktact::packet::{
    CanonicalPacket, IcmpFields, TcpFields, TcpFlags, TcpOptProfile, Transport, UdpFields,
};

pub const A: &str = "10.0.0.1";
pub const B: &str = "10.0.0.2";

pub const SYN: TcpFlags = TcpFlags::SYN;
pub const ACK: TcpFlags = TcpFlags::ACK;
pub const FIN: TcpFlags = TcpFlags::FIN;
pub const RST: TcpFlags = TcpFlags::RST;
pub const PSH: TcpFlags = TcpFlags::PSH;

fn base(ts_us: u64, src: IpAddr, dst: IpAddr, transport: Transport, len: u16) -> CanonicalPacket {
    CanonicalPacket {
        ts_us,
        src_mac: [2, 0, 0, 0, 0, 1],
        dst_mac: [2, 0, 0, 0, 0, 2],
        src_ip: src,
        dst_ip: dst,
        ttl: 64,
        transport,
        payload_len: len,
        payload: vec![0; usize::from(len)],
    }
}

/// One TCP connection between A:40000 and B:80, with a running clock.
pub struct Tcp {
    pub a: IpAddr,
    pub b: IpAddr,
    pub a_port: u16,
    pub ts: u64,
    pub step_us: u64,
    pub pkts: Vec<CanonicalPacket>,
}

impl Tcp {
    pub fn new() -> Self {
        Self::between(A, B, 40000)
    }

    pub fn between(a: &str, b: &str, a_port: u16) -> Self {
        Self {
            a: a.parse().unwrap(),
            b: b.parse().unwrap(),
            a_port,
            ts: 1_000_000,
            step_us: 1_000,
            pkts: Vec::new(),
        }
    }

    /// Appends a packet from A (`from_a`) or B.
    pub fn send(
        &mut self,
        from_a: bool,
        seq: u32,
        ack: u32,
        flags: TcpFlags,
        len: u16,
        window: u16,
    ) -> &mut Self {
        let (src, dst, sp, dp) = if from_a {
            (self.a, self.b, self.a_port, 80)
        } else {
            (self.b, self.a, 80, self.a_port)
        };
        let t = Transport::Tcp(TcpFields {
            src_port: sp,
            dst_port: dp,
            seq,
            ack,
            flags,
            window,
            options: TcpOptProfile::None,
        });
        self.pkts.push(base(self.ts, src, dst, t, len));
        self.ts += self.step_us;
        self
    }

    pub fn a(&mut self, seq: u32, ack: u32, flags: TcpFlags, len: u16) -> &mut Self {
        self.send(true, seq, ack, flags, len, 1000)
    }

    pub fn b(&mut self, seq: u32, ack: u32, flags: TcpFlags, len: u16) -> &mut Self {
        self.send(false, seq, ack, flags, len, 1000)
    }

    pub fn wait(&mut self, us: u64) -> &mut Self {
        self.ts += us;
        self
    }

    /// SYN 1000, SYN/ACK 5000, ACK: A's next byte is 1001, B's is 5001.
    pub fn handshake(&mut self) -> &mut Self {
        self.a(1000, 0, SYN, 0)
            .b(5000, 1001, SYN | ACK, 0)
            .a(1001, 5001, ACK, 0)
    }

    pub fn data(&mut self, seq: u32, len: u16) -> &mut Self {
        self.a(seq, 5001, ACK | PSH, len)
    }

    pub fn ack_from_b(&mut self, ack: u32) -> &mut Self {
        self.b(5001, ack, ACK, 0)
    }

    /// FIN from A at `a_seq`, FIN from B, final ACK from A.
    pub fn close(&mut self, a_seq: u32) -> &mut Self {
        self.a(a_seq, 5001, FIN | ACK, 0)
            .b(5001, a_seq + 1, FIN | ACK, 0)
            .a(a_seq + 1, 5002, ACK, 0)
    }
}

pub fn udp(ts_us: u64, from_a: bool, len: u16) -> CanonicalPacket {
    let (a, b): (IpAddr, IpAddr) = (A.parse().unwrap(), B.parse().unwrap());
    let (src, dst, sp, dp) = if from_a {
        (a, b, 5353, 53)
    } else {
        (b, a, 53, 5353)
    };
    base(
        ts_us,
        src,
        dst,
        Transport::Udp(UdpFields {
            src_port: sp,
            dst_port: dp,
        }),
        len,
    )
}

pub fn icmp(ts_us: u64, from_a: bool, icmp_type: u8) -> CanonicalPacket {
    let (a, b): (IpAddr, IpAddr) = (A.parse().unwrap(), B.parse().unwrap());
    let (src, dst) = if from_a { (a, b) } else { (b, a) };
    base(
        ts_us,
        src,
        dst,
        Transport::Icmp(IcmpFields {
            icmp_type,
            icmp_code: 0,
        }),
        8,
    )
}

/// One micro-trace per event, in `TcpEvent::ALL` order.
pub fn event_micro_traces() -> Vec<(TcpEvent, Vec<CanonicalPacket>)> {
    let mut out = Vec::new();
    let mut push = |e, t: &Tcp| out.push((e, t.pkts.clone()));

    let mut t = Tcp::new();
    t.handshake().data(1001, 100).data(1001, 100);
    push(TcpEvent::Retransmission, &t);

    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .data(1101, 100)
        .data(1201, 100);
    for _ in 0..4 {
        t.ack_from_b(1101);
    }
    t.data(1101, 100);
    push(TcpEvent::FastRetransmission, &t);

    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .ack_from_b(1101)
        .data(1001, 100);
    push(TcpEvent::SpuriousRetransmission, &t);

    let mut t = Tcp::new();
    t.handshake().data(1001, 100).data(1201, 100);
    push(TcpEvent::LostSegment, &t);

    let mut t = Tcp::new();
    t.handshake().data(1001, 100).ack_from_b(1501);
    push(TcpEvent::AckedLostSegment, &t);

    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .ack_from_b(1101)
        .ack_from_b(1101);
    push(TcpEvent::DuplicateAck, &t);

    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .data(1201, 100)
        .data(1101, 100);
    push(TcpEvent::OutOfOrder, &t);

    let mut t = Tcp::new();
    t.handshake().send(false, 5001, 1001, ACK, 0, 0);
    push(TcpEvent::ZeroWindow, &t);
    out
}
