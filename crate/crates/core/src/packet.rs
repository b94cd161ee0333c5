//! Canonical single-packet model and the Ethernet/IP/L4 wire codec.
//!
//! `decode_frame` never fails: anything outside the supported header stack comes back as a
//! [`SkipReason`]. `encode_frame` renders a canonical packet with all length and checksum
//! fields recomputed from content.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const IPV6_HEADER_LEN: usize = 40;
pub const TCP_BASE_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
/// Type, code and checksum. Everything after (identifier, sequence, data) is payload.
pub const ICMP_HEADER_LEN: usize = 4;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86DD;
const ETHERTYPE_VLAN: u16 = 0x8100;

const IPPROTO_ICMP: u8 = 1;
const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;
const IPPROTO_IPV6_FRAG: u8 = 44;
const IPPROTO_ICMPV6: u8 = 58;

/// MSS advertised by every canonical option layout that carries one.
pub const CANONICAL_MSS: u16 = 1460;
/// Window-scale shift advertised by the canonical full SYN layout.
pub const CANONICAL_WSCALE: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpFamily {
    V4,
    V6,
}

impl IpFamily {
    pub fn of(addr: &IpAddr) -> Self {
        match addr {
            IpAddr::V4(_) => IpFamily::V4,
            IpAddr::V6(_) => IpFamily::V6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
    Icmp,
}

impl Proto {
    pub(crate) fn code(self) -> u8 {
        match self {
            Proto::Tcp => IPPROTO_TCP,
            Proto::Udp => IPPROTO_UDP,
            Proto::Icmp => IPPROTO_ICMP,
        }
    }
}

/// The six TCP flag bits carried by the canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);
    const MASK: u8 = 0x3F;

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn from_bits_truncate(bits: u8) -> Self {
        TcpFlags(bits & Self::MASK)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: TcpFlags) -> Self {
        TcpFlags(self.0 | other.0)
    }

    pub fn syn(self) -> bool {
        self.contains(Self::SYN)
    }
    pub fn ack(self) -> bool {
        self.contains(Self::ACK)
    }
    pub fn fin(self) -> bool {
        self.contains(Self::FIN)
    }
    pub fn rst(self) -> bool {
        self.contains(Self::RST)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

/// Canonical TCP option layouts. Declaration order is the tie-break order used when mapping
/// observed options onto a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcpOptProfile {
    #[default]
    None,
    MssOnly,
    MssSackTsWs,
    TsOnly,
    SackTs,
}

const OPT_MSS: u8 = 1 << 0;
const OPT_SACK: u8 = 1 << 1;
const OPT_TS: u8 = 1 << 2;
const OPT_WS: u8 = 1 << 3;

impl TcpOptProfile {
    pub const ALL: [TcpOptProfile; 5] = [
        TcpOptProfile::None,
        TcpOptProfile::MssOnly,
        TcpOptProfile::MssSackTsWs,
        TcpOptProfile::TsOnly,
        TcpOptProfile::SackTs,
    ];

    fn option_set(self) -> u8 {
        match self {
            TcpOptProfile::None => 0,
            TcpOptProfile::MssOnly => OPT_MSS,
            TcpOptProfile::MssSackTsWs => OPT_MSS | OPT_SACK | OPT_TS | OPT_WS,
            TcpOptProfile::TsOnly => OPT_TS,
            TcpOptProfile::SackTs => OPT_SACK | OPT_TS,
        }
    }

    /// Largest profile whose option set is contained in `observed`; earlier variants win ties.
    fn from_option_set(observed: u8) -> Self {
        let mut best = TcpOptProfile::None;
        for p in Self::ALL {
            let set = p.option_set();
            if set & observed == set && set.count_ones() > best.option_set().count_ones() {
                best = p;
            }
        }
        best
    }

    /// Byte length of the canonical layout (always a multiple of 4).
    pub fn encoded_len(self) -> usize {
        match self {
            TcpOptProfile::None => 0,
            TcpOptProfile::MssOnly => 4,
            TcpOptProfile::MssSackTsWs => 20,
            TcpOptProfile::TsOnly | TcpOptProfile::SackTs => 12,
        }
    }

    /// Canonical option bytes. The timestamp value ticks once per millisecond of `ts_us`.
    pub fn encode(self, ts_us: u64) -> Vec<u8> {
        let tsval = ((ts_us / 1000) as u32).to_be_bytes();
        let mss = CANONICAL_MSS.to_be_bytes();
        let ts = |out: &mut Vec<u8>| {
            out.extend_from_slice(&[8, 10]);
            out.extend_from_slice(&tsval);
            out.extend_from_slice(&[0, 0, 0, 0]);
        };
        let mut out = Vec::with_capacity(self.encoded_len());
        match self {
            TcpOptProfile::None => {}
            TcpOptProfile::MssOnly => out.extend_from_slice(&[2, 4, mss[0], mss[1]]),
            TcpOptProfile::MssSackTsWs => {
                out.extend_from_slice(&[2, 4, mss[0], mss[1], 4, 2]);
                ts(&mut out);
                out.extend_from_slice(&[1, 3, 3, CANONICAL_WSCALE]);
            }
            TcpOptProfile::TsOnly => {
                out.extend_from_slice(&[1, 1]);
                ts(&mut out);
            }
            TcpOptProfile::SackTs => {
                out.extend_from_slice(&[4, 2]);
                ts(&mut out);
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        out
    }

    /// Maps raw option bytes to a profile. `None` when the option list is malformed.
    pub fn classify(options: &[u8]) -> Option<Self> {
        let mut observed = 0u8;
        let mut i = 0;
        while i < options.len() {
            match options[i] {
                0 => break,
                1 => i += 1,
                kind => {
                    let len = *options.get(i + 1)? as usize;
                    if len < 2 || i + len > options.len() {
                        return None;
                    }
                    observed |= match kind {
                        2 => OPT_MSS,
                        3 => OPT_WS,
                        4 | 5 => OPT_SACK,
                        8 => OPT_TS,
                        _ => 0,
                    };
                    i += len;
                }
            }
        }
        Some(Self::from_option_set(observed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TcpFields {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub options: TcpOptProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UdpFields {
    pub src_port: u16,
    pub dst_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IcmpFields {
    pub icmp_type: u8,
    pub icmp_code: u8,
}

/// Protocol-specific header fields; only the variant matching the protocol exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    Tcp(TcpFields),
    Udp(UdpFields),
    Icmp(IcmpFields),
}

/// A fully decoded packet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalPacket {
    pub ts_us: u64,
    pub src_mac: [u8; 6],
    pub dst_mac: [u8; 6],
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    /// Hop limit for IPv6.
    pub ttl: u8,
    pub transport: Transport,
    pub payload_len: u16,
    /// Either exactly `payload_len` bytes, or empty for header-only captures.
    pub payload: Vec<u8>,
}

impl CanonicalPacket {
    pub fn proto(&self) -> Proto {
        match self.transport {
            Transport::Tcp(_) => Proto::Tcp,
            Transport::Udp(_) => Proto::Udp,
            Transport::Icmp(_) => Proto::Icmp,
        }
    }

    pub fn ip_family(&self) -> IpFamily {
        IpFamily::of(&self.src_ip)
    }

    pub fn tcp(&self) -> Option<&TcpFields> {
        match &self.transport {
            Transport::Tcp(t) => Some(t),
            _ => None,
        }
    }

    pub fn icmp(&self) -> Option<&IcmpFields> {
        match &self.transport {
            Transport::Icmp(i) => Some(i),
            _ => None,
        }
    }

    /// Source and destination ports for TCP/UDP.
    pub fn ports(&self) -> Option<(u16, u16)> {
        match self.transport {
            Transport::Tcp(t) => Some((t.src_port, t.dst_port)),
            Transport::Udp(u) => Some((u.src_port, u.dst_port)),
            Transport::Icmp(_) => None,
        }
    }

    pub fn l4_header_len(&self) -> usize {
        match &self.transport {
            Transport::Tcp(t) => TCP_BASE_HEADER_LEN + t.options.encoded_len(),
            Transport::Udp(_) => UDP_HEADER_LEN,
            Transport::Icmp(_) => ICMP_HEADER_LEN,
        }
    }

    fn l3_header_len(&self) -> usize {
        match self.ip_family() {
            IpFamily::V4 => IPV4_HEADER_LEN,
            IpFamily::V6 => IPV6_HEADER_LEN,
        }
    }

    /// Length of the L2+L3+L4 header stack as rendered by [`encode_frame`].
    pub fn header_len(&self) -> usize {
        ETH_HEADER_LEN + self.l3_header_len() + self.l4_header_len()
    }

    /// Length on the wire as rendered by [`encode_frame`].
    pub fn wire_len(&self) -> usize {
        self.header_len() + self.payload_len as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NonEthernet,
    NonIp,
    UnsupportedProto,
    Fragment,
    TruncatedHeader,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeOutcome {
    Packet(CanonicalPacket),
    Skip(SkipReason),
}

impl DecodeOutcome {
    pub fn packet(self) -> Option<CanonicalPacket> {
        match self {
            DecodeOutcome::Packet(p) => Some(p),
            DecodeOutcome::Skip(_) => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("source and destination addresses belong to different IP families")]
    FamilyMismatch,
    #[error("payload holds {actual} bytes but payload_len is {declared}")]
    PayloadLength { declared: u16, actual: usize },
    #[error("packet of {0} bytes does not fit the IP length field")]
    Oversize(usize),
}

fn ones_sum(mut acc: u32, bytes: &[u8]) -> u32 {
    let mut chunks = bytes.chunks_exact(2);
    for c in &mut chunks {
        acc += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        acc += u32::from(*last) << 8;
    }
    while acc > 0xFFFF {
        acc = (acc & 0xFFFF) + (acc >> 16);
    }
    acc
}

/// 16-bit ones-complement of the ones-complement sum; odd lengths are padded with a zero byte.
pub fn internet_checksum(bytes: &[u8]) -> u16 {
    !(ones_sum(0, bytes) as u16)
}

fn pseudo_header_sum(src: &IpAddr, dst: &IpAddr, proto: u8, l4_len: usize) -> u32 {
    match (src, dst) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let acc = ones_sum(0, &s.octets());
            let acc = ones_sum(acc, &d.octets());
            ones_sum(acc, &[0, proto, (l4_len >> 8) as u8, l4_len as u8])
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            let acc = ones_sum(0, &s.octets());
            let acc = ones_sum(acc, &d.octets());
            let len = (l4_len as u32).to_be_bytes();
            let acc = ones_sum(acc, &len);
            ones_sum(acc, &[0, 0, 0, proto])
        }
        _ => unreachable!("family checked by caller"),
    }
}

fn l4_checksum(src: &IpAddr, dst: &IpAddr, proto: u8, segment: &[u8]) -> u16 {
    let acc = pseudo_header_sum(src, dst, proto, segment.len());
    !(ones_sum(acc, segment) as u16)
}

fn ip_proto_code(family: IpFamily, proto: Proto) -> u8 {
    match (family, proto) {
        (IpFamily::V6, Proto::Icmp) => IPPROTO_ICMPV6,
        (_, p) => p.code(),
    }
}

/// Renders a canonical packet as an Ethernet II frame. An empty payload with a nonzero
/// `payload_len` renders zero bytes of that length (header-only realizations).
pub fn encode_frame(pkt: &CanonicalPacket) -> Result<Vec<u8>, EncodeError> {
    let family = pkt.ip_family();
    if IpFamily::of(&pkt.dst_ip) != family {
        return Err(EncodeError::FamilyMismatch);
    }
    let plen = pkt.payload_len as usize;
    if !pkt.payload.is_empty() && pkt.payload.len() != plen {
        return Err(EncodeError::PayloadLength {
            declared: pkt.payload_len,
            actual: pkt.payload.len(),
        });
    }

    let mut l4 = Vec::with_capacity(pkt.l4_header_len() + plen);
    match &pkt.transport {
        Transport::Tcp(t) => {
            let opts = t.options.encode(pkt.ts_us);
            let doff = ((TCP_BASE_HEADER_LEN + opts.len()) / 4) as u8;
            l4.extend_from_slice(&t.src_port.to_be_bytes());
            l4.extend_from_slice(&t.dst_port.to_be_bytes());
            l4.extend_from_slice(&t.seq.to_be_bytes());
            l4.extend_from_slice(&t.ack.to_be_bytes());
            l4.push(doff << 4);
            l4.push(t.flags.bits());
            l4.extend_from_slice(&t.window.to_be_bytes());
            l4.extend_from_slice(&[0, 0, 0, 0]);
            l4.extend_from_slice(&opts);
        }
        Transport::Udp(u) => {
            let len = UDP_HEADER_LEN + plen;
            if len > u16::MAX as usize {
                return Err(EncodeError::Oversize(len));
            }
            l4.extend_from_slice(&u.src_port.to_be_bytes());
            l4.extend_from_slice(&u.dst_port.to_be_bytes());
            l4.extend_from_slice(&(len as u16).to_be_bytes());
            l4.extend_from_slice(&[0, 0]);
        }
        Transport::Icmp(i) => {
            l4.extend_from_slice(&[i.icmp_type, i.icmp_code, 0, 0]);
        }
    }
    if pkt.payload.is_empty() {
        l4.resize(l4.len() + plen, 0);
    } else {
        l4.extend_from_slice(&pkt.payload);
    }

    let proto_code = ip_proto_code(family, pkt.proto());
    let csum = match pkt.transport {
        Transport::Icmp(_) if family == IpFamily::V4 => internet_checksum(&l4),
        Transport::Udp(_) => match l4_checksum(&pkt.src_ip, &pkt.dst_ip, proto_code, &l4) {
            0 => 0xFFFF,
            c => c,
        },
        _ => l4_checksum(&pkt.src_ip, &pkt.dst_ip, proto_code, &l4),
    };
    let csum_at = match pkt.transport {
        Transport::Tcp(_) => 16,
        Transport::Udp(_) => 6,
        Transport::Icmp(_) => 2,
    };
    l4[csum_at..csum_at + 2].copy_from_slice(&csum.to_be_bytes());

    let mut frame = Vec::with_capacity(pkt.header_len() + plen);
    frame.extend_from_slice(&pkt.dst_mac);
    frame.extend_from_slice(&pkt.src_mac);
    match (&pkt.src_ip, &pkt.dst_ip) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let total = IPV4_HEADER_LEN + l4.len();
            if total > u16::MAX as usize {
                return Err(EncodeError::Oversize(total));
            }
            frame.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
            let mut ip = [0u8; IPV4_HEADER_LEN];
            ip[0] = 0x45;
            ip[2..4].copy_from_slice(&(total as u16).to_be_bytes());
            // DF set, identification zero.
            ip[6] = 0x40;
            ip[8] = pkt.ttl;
            ip[9] = proto_code;
            ip[12..16].copy_from_slice(&s.octets());
            ip[16..20].copy_from_slice(&d.octets());
            let c = internet_checksum(&ip);
            ip[10..12].copy_from_slice(&c.to_be_bytes());
            frame.extend_from_slice(&ip);
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            if l4.len() > u16::MAX as usize {
                return Err(EncodeError::Oversize(l4.len()));
            }
            frame.extend_from_slice(&ETHERTYPE_IPV6.to_be_bytes());
            let mut ip = [0u8; IPV6_HEADER_LEN];
            ip[0] = 0x60;
            ip[4..6].copy_from_slice(&(l4.len() as u16).to_be_bytes());
            ip[6] = proto_code;
            ip[7] = pkt.ttl;
            ip[8..24].copy_from_slice(&s.octets());
            ip[24..40].copy_from_slice(&d.octets());
            frame.extend_from_slice(&ip);
        }
        _ => unreachable!(),
    }
    frame.extend_from_slice(&l4);
    Ok(frame)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Located header stack of a frame, shared by the decoder, the truncating writer and the
/// checksum verifier.
struct Layout<'a> {
    frame: &'a [u8],
    family: IpFamily,
    l3_start: usize,
    l4_start: usize,
    ip_proto: u8,
    /// Declared L4 length (header + payload) from the IP header.
    l4_declared: usize,
}

impl<'a> Layout<'a> {
    /// Captured L4 bytes, bounded by the declared length.
    fn l4_captured(&self) -> &'a [u8] {
        let end = (self.l4_start + self.l4_declared).min(self.frame.len());
        &self.frame[self.l4_start.min(end)..end]
    }

    fn addrs(&self) -> (IpAddr, IpAddr) {
        let f = self.frame;
        let s = self.l3_start;
        match self.family {
            IpFamily::V4 => (
                IpAddr::V4(Ipv4Addr::new(f[s + 12], f[s + 13], f[s + 14], f[s + 15])),
                IpAddr::V4(Ipv4Addr::new(f[s + 16], f[s + 17], f[s + 18], f[s + 19])),
            ),
            IpFamily::V6 => {
                let mut a = [0u8; 16];
                let mut b = [0u8; 16];
                a.copy_from_slice(&f[s + 8..s + 24]);
                b.copy_from_slice(&f[s + 24..s + 40]);
                (IpAddr::V6(Ipv6Addr::from(a)), IpAddr::V6(Ipv6Addr::from(b)))
            }
        }
    }
}

fn locate(frame: &[u8]) -> Result<Layout<'_>, SkipReason> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(SkipReason::TruncatedHeader);
    }
    let mut ethertype = be16(frame, 12);
    let mut l3_start = ETH_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < ETH_HEADER_LEN + 4 {
            return Err(SkipReason::TruncatedHeader);
        }
        ethertype = be16(frame, 16);
        l3_start += 4;
    }
    if ethertype < 0x0600 {
        return Err(SkipReason::NonEthernet);
    }
    match ethertype {
        ETHERTYPE_IPV4 => {
            let ip = &frame[l3_start..];
            if ip.len() < IPV4_HEADER_LEN {
                return Err(SkipReason::TruncatedHeader);
            }
            if ip[0] >> 4 != 4 {
                return Err(SkipReason::Malformed);
            }
            let ihl = (ip[0] & 0x0F) as usize * 4;
            if ihl < IPV4_HEADER_LEN {
                return Err(SkipReason::Malformed);
            }
            if ip.len() < ihl {
                return Err(SkipReason::TruncatedHeader);
            }
            let total = be16(ip, 2) as usize;
            if total < ihl {
                return Err(SkipReason::Malformed);
            }
            let frag = be16(ip, 6);
            if frag & 0x2000 != 0 || frag & 0x1FFF != 0 {
                return Err(SkipReason::Fragment);
            }
            let ip_proto = ip[9];
            if !matches!(ip_proto, IPPROTO_TCP | IPPROTO_UDP | IPPROTO_ICMP) {
                return Err(SkipReason::UnsupportedProto);
            }
            Ok(Layout {
                frame,
                family: IpFamily::V4,
                l3_start,
                l4_start: l3_start + ihl,
                ip_proto,
                l4_declared: total - ihl,
            })
        }
        ETHERTYPE_IPV6 => {
            let ip = &frame[l3_start..];
            if ip.len() < IPV6_HEADER_LEN {
                return Err(SkipReason::TruncatedHeader);
            }
            if ip[0] >> 4 != 6 {
                return Err(SkipReason::Malformed);
            }
            let ip_proto = ip[6];
            match ip_proto {
                IPPROTO_TCP | IPPROTO_UDP | IPPROTO_ICMPV6 => {}
                IPPROTO_IPV6_FRAG => return Err(SkipReason::Fragment),
                _ => return Err(SkipReason::UnsupportedProto),
            }
            Ok(Layout {
                frame,
                family: IpFamily::V6,
                l3_start,
                l4_start: l3_start + IPV6_HEADER_LEN,
                ip_proto,
                l4_declared: be16(ip, 4) as usize,
            })
        }
        _ => Err(SkipReason::NonIp),
    }
}

fn l4_header_len_of(layout: &Layout<'_>) -> Result<usize, SkipReason> {
    let l4 = layout.l4_captured();
    match layout.ip_proto {
        IPPROTO_TCP => {
            if l4.len() < TCP_BASE_HEADER_LEN {
                return Err(if layout.l4_declared < TCP_BASE_HEADER_LEN {
                    SkipReason::Malformed
                } else {
                    SkipReason::TruncatedHeader
                });
            }
            let doff = (l4[12] >> 4) as usize * 4;
            if doff < TCP_BASE_HEADER_LEN || doff > layout.l4_declared {
                return Err(SkipReason::Malformed);
            }
            if doff > l4.len() {
                return Err(SkipReason::TruncatedHeader);
            }
            Ok(doff)
        }
        IPPROTO_UDP | IPPROTO_ICMP | IPPROTO_ICMPV6 => {
            let need = if layout.ip_proto == IPPROTO_UDP {
                UDP_HEADER_LEN
            } else {
                ICMP_HEADER_LEN
            };
            if layout.l4_declared < need {
                Err(SkipReason::Malformed)
            } else if l4.len() < need {
                Err(SkipReason::TruncatedHeader)
            } else {
                Ok(need)
            }
        }
        _ => Err(SkipReason::UnsupportedProto),
    }
}

/// Decodes one Ethernet frame. Malformed or out-of-scope input yields a skip record.
pub fn decode_frame(frame: &[u8], ts_us: u64) -> DecodeOutcome {
    match decode_inner(frame, ts_us) {
        Ok(p) => DecodeOutcome::Packet(p),
        Err(r) => DecodeOutcome::Skip(r),
    }
}

fn decode_inner(frame: &[u8], ts_us: u64) -> Result<CanonicalPacket, SkipReason> {
    let layout = locate(frame)?;
    let hlen = l4_header_len_of(&layout)?;
    let l4 = layout.l4_captured();
    let payload_len =
        u16::try_from(layout.l4_declared - hlen).map_err(|_| SkipReason::Malformed)?;
    let transport = match layout.ip_proto {
        IPPROTO_TCP => {
            let options = TcpOptProfile::classify(&l4[TCP_BASE_HEADER_LEN..hlen])
                .ok_or(SkipReason::Malformed)?;
            Transport::Tcp(TcpFields {
                src_port: be16(l4, 0),
                dst_port: be16(l4, 2),
                seq: be32(l4, 4),
                ack: be32(l4, 8),
                flags: TcpFlags::from_bits_truncate(l4[13]),
                window: be16(l4, 14),
                options,
            })
        }
        IPPROTO_UDP => Transport::Udp(UdpFields {
            src_port: be16(l4, 0),
            dst_port: be16(l4, 2),
        }),
        _ => Transport::Icmp(IcmpFields {
            icmp_type: l4[0],
            icmp_code: l4[1],
        }),
    };
    let payload = if l4.len() == layout.l4_declared {
        l4[hlen..].to_vec()
    } else {
        Vec::new()
    };
    let (src_ip, dst_ip) = layout.addrs();
    let ttl = match layout.family {
        IpFamily::V4 => frame[layout.l3_start + 8],
        IpFamily::V6 => frame[layout.l3_start + 7],
    };
    let mut dst_mac = [0u8; 6];
    let mut src_mac = [0u8; 6];
    dst_mac.copy_from_slice(&frame[0..6]);
    src_mac.copy_from_slice(&frame[6..12]);
    Ok(CanonicalPacket {
        ts_us,
        src_mac,
        dst_mac,
        src_ip,
        dst_ip,
        ttl,
        transport,
        payload_len,
        payload,
    })
}

/// Length of the L2+L3+L4 header stack of a raw frame, if it decodes.
pub fn frame_header_len(frame: &[u8]) -> Option<usize> {
    let layout = locate(frame).ok()?;
    let h = l4_header_len_of(&layout).ok()?;
    Some(layout.l4_start + h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecksumFault {
    Ipv4Header,
    Transport,
}

/// Verifies the IPv4 header checksum and, when the L4 segment is fully captured, the
/// transport checksum. Frames outside decode scope return `Ok` (nothing to verify).
pub fn verify_checksums(frame: &[u8]) -> Result<(), ChecksumFault> {
    let Ok(layout) = locate(frame) else {
        return Ok(());
    };
    if layout.family == IpFamily::V4 {
        let hdr = &frame[layout.l3_start..layout.l4_start];
        if ones_sum(0, hdr) != 0xFFFF {
            return Err(ChecksumFault::Ipv4Header);
        }
    }
    let l4 = layout.l4_captured();
    if l4.len() != layout.l4_declared {
        return Ok(());
    }
    if layout.family == IpFamily::V4
        && layout.ip_proto == IPPROTO_UDP
        && l4.get(6..8) == Some(&[0, 0][..])
    {
        // Transmitted without a checksum.
        return Ok(());
    }
    let (src, dst) = layout.addrs();
    let sum = match (layout.family, layout.ip_proto) {
        (IpFamily::V4, IPPROTO_ICMP) => ones_sum(0, l4),
        (_, proto) => ones_sum(pseudo_header_sum(&src, &dst, proto, l4.len()), l4),
    };
    if sum == 0xFFFF {
        Ok(())
    } else {
        Err(ChecksumFault::Transport)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syn_packet() -> CanonicalPacket {
        CanonicalPacket {
            ts_us: 1_000,
            src_mac: [0x02, 0, 0, 0, 0, 1],
            dst_mac: [0x02, 0, 0, 0, 0, 2],
            src_ip: "10.0.0.1".parse().unwrap(),
            dst_ip: "10.0.0.2".parse().unwrap(),
            ttl: 64,
            transport: Transport::Tcp(TcpFields {
                src_port: 40000,
                dst_port: 80,
                seq: 1000,
                ack: 0,
                flags: TcpFlags::SYN,
                window: 65535,
                options: TcpOptProfile::None,
            }),
            payload_len: 0,
            payload: vec![],
        }
    }

    #[test]
    fn checksum_trivia() {
        assert_eq!(internet_checksum(&[]), 0xFFFF);
        assert_eq!(internet_checksum(&[0x00, 0x01]), 0xFFFE);
        // odd length pads with zero
        assert_eq!(internet_checksum(&[0x01]), internet_checksum(&[0x01, 0x00]));
    }

    #[test]
    fn arp_is_non_ip() {
        let mut f = vec![0u8; 14];
        f[12] = 0x08;
        f[13] = 0x06;
        assert_eq!(decode_frame(&f, 0), DecodeOutcome::Skip(SkipReason::NonIp));
    }

    #[test]
    fn short_frame_is_truncated() {
        assert_eq!(
            decode_frame(&[0u8; 10], 0),
            DecodeOutcome::Skip(SkipReason::TruncatedHeader)
        );
    }

    #[test]
    fn fragment_offset_skipped() {
        let mut f = encode_frame(&syn_packet()).unwrap();
        // fragment offset 185 in 8-byte units
        f[14 + 6] = 0;
        f[14 + 7] = 185;
        assert_eq!(
            decode_frame(&f, 0),
            DecodeOutcome::Skip(SkipReason::Fragment)
        );
        f[14 + 7] = 0;
        f[14 + 6] = 0x20; // MF
        assert_eq!(
            decode_frame(&f, 0),
            DecodeOutcome::Skip(SkipReason::Fragment)
        );
    }

    #[test]
    fn vlan_unwrapped_once() {
        let f = encode_frame(&syn_packet()).unwrap();
        let mut tagged = f[..12].to_vec();
        tagged.extend_from_slice(&[0x81, 0x00, 0x00, 0x64]);
        tagged.extend_from_slice(&f[12..]);
        assert_eq!(decode_frame(&tagged, 1_000).packet().unwrap(), syn_packet());
        assert_eq!(frame_header_len(&tagged), Some(58));
    }

    #[test]
    fn ipv6_extension_header_unsupported() {
        let mut p = syn_packet();
        p.src_ip = "fd00::1".parse().unwrap();
        p.dst_ip = "fd00::2".parse().unwrap();
        let mut f = encode_frame(&p).unwrap();
        f[14 + 6] = 0; // hop-by-hop
        assert_eq!(
            decode_frame(&f, 0),
            DecodeOutcome::Skip(SkipReason::UnsupportedProto)
        );
        f[14 + 6] = 44;
        assert_eq!(
            decode_frame(&f, 0),
            DecodeOutcome::Skip(SkipReason::Fragment)
        );
    }

    #[test]
    fn family_mismatch_rejected() {
        let mut p = syn_packet();
        p.dst_ip = "fd00::2".parse().unwrap();
        assert_eq!(encode_frame(&p), Err(EncodeError::FamilyMismatch));
    }

    #[test]
    fn payload_length_mismatch_rejected() {
        let mut p = syn_packet();
        p.payload_len = 3;
        p.payload = vec![1, 2];
        assert!(matches!(
            encode_frame(&p),
            Err(EncodeError::PayloadLength { .. })
        ));
    }

    #[test]
    fn header_only_capture_keeps_payload_len() {
        let mut p = syn_packet();
        p.payload_len = 100;
        p.payload = vec![7; 100];
        let f = encode_frame(&p).unwrap();
        let got = decode_frame(&f[..54], 1_000).packet().unwrap();
        assert_eq!(got.payload_len, 100);
        assert!(got.payload.is_empty());
    }

    #[test]
    fn option_profiles_classify_to_themselves() {
        for p in TcpOptProfile::ALL {
            assert_eq!(TcpOptProfile::classify(&p.encode(123_456)), Some(p));
        }
    }

    #[test]
    fn option_subset_matching() {
        // MSS + WS only: MssOnly is the largest contained profile.
        assert_eq!(
            TcpOptProfile::classify(&[2, 4, 5, 0xb4, 1, 3, 3, 7]),
            Some(TcpOptProfile::MssOnly)
        );
        // SACK blocks + TS map onto SackTs.
        let mut o = vec![1, 1, 8, 10, 0, 0, 0, 1, 0, 0, 0, 2, 1, 1, 5, 10];
        o.extend_from_slice(&[0; 8]);
        assert_eq!(TcpOptProfile::classify(&o), Some(TcpOptProfile::SackTs));
        // length overrun
        assert_eq!(TcpOptProfile::classify(&[2, 8, 0, 0]), None);
    }

    #[test]
    fn udp_checksum_never_zero() {
        // Search for a payload whose natural checksum is zero and confirm 0xFFFF is emitted.
        let base = CanonicalPacket {
            transport: Transport::Udp(UdpFields {
                src_port: 1,
                dst_port: 2,
            }),
            payload_len: 2,
            payload: vec![0, 0],
            ..syn_packet()
        };
        let mut found = false;
        for v in 0..=u16::MAX {
            let mut p = base.clone();
            p.payload = v.to_be_bytes().to_vec();
            let f = encode_frame(&p).unwrap();
            let c = be16(&f, 14 + 20 + 6);
            assert_ne!(c, 0);
            assert_eq!(verify_checksums(&f), Ok(()));
            if c == 0xFFFF {
                found = true;
                break;
            }
        }
        assert!(found);
    }
}
