//! Seeded generator of interleaved TCP, UDP and ICMP flows with a ground-truth manifest.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

use crate::flowtable::SplitMix64;
use crate::metrics::CloseReason;
use crate::packet::{
    CanonicalPacket, IcmpFields, IpFamily, Proto, TcpFields, TcpFlags, TcpOptProfile, Transport,
    UdpFields,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub tcp_flows: u32,
    pub udp_flows: u32,
    pub icmp_flows: u32,
    /// Mean number of request/response rounds per TCP flow.
    pub mean_rounds: f64,
    /// Largest response, in segments.
    pub max_response_segments: u32,
    /// Mean think time between rounds, microseconds.
    pub iat_scale_us: u64,
    /// Per-segment probability of an injected duplicate (plain retransmission).
    pub retransmission_rate: f64,
    /// Per-segment probability of swapping a segment with its successor.
    pub reorder_rate: f64,
    /// Per-segment probability of a capture-side loss repaired by fast retransmission.
    pub loss_rate: f64,
    /// Fraction of TCP flows torn down by RST instead of FIN.
    pub rst_fraction: f64,
    /// Fraction of UDP flows that go quiet past the idle timeout and resume.
    pub idle_split_fraction: f64,
    pub ipv6_fraction: f64,
    /// Window over which flow start times are spread, microseconds.
    pub duration_us: u64,
    pub epoch_us: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            tcp_flows: 210,
            udp_flows: 60,
            icmp_flows: 20,
            mean_rounds: 5.0,
            max_response_segments: 8,
            iat_scale_us: 40_000,
            retransmission_rate: 0.01,
            reorder_rate: 0.01,
            loss_rate: 0.005,
            rst_fraction: 0.1,
            idle_split_fraction: 0.1,
            ipv6_fraction: 0.2,
            duration_us: 120_000_000,
            epoch_us: 1_700_000_000_000_000,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<(), String> {
        let rates = [
            ("retransmission_rate", self.retransmission_rate),
            ("reorder_rate", self.reorder_rate),
            ("loss_rate", self.loss_rate),
            ("rst_fraction", self.rst_fraction),
            ("idle_split_fraction", self.idle_split_fraction),
            ("ipv6_fraction", self.ipv6_fraction),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} must be in [0, 1], got {r}"));
            }
        }
        if self.mean_rounds < 1.0 || self.max_response_segments == 0 {
            return Err("mean_rounds must be >= 1 and max_response_segments >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSession {
    pub flow: u32,
    pub proto: Proto,
    pub start_ts_us: u64,
    pub end_ts_us: u64,
    pub packets: u64,
    pub close_reason: CloseReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedEvents {
    pub retransmissions: u64,
    pub reorders: u64,
    pub losses: u64,
    pub zero_windows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub packets: u64,
    pub flows: u32,
    pub sessions: Vec<TruthSession>,
    pub injected: InjectedEvents,
}

#[derive(Debug, Clone)]
pub struct SynthTrace {
    pub packets: Vec<CanonicalPacket>,
    pub manifest: SynthManifest,
}

const MSS_PAYLOAD: u16 = 1448;
/// Longest silence inside a flow that should stay one session.
const MAX_INNER_GAP_US: u64 = 20_000_000;
const IDLE_SPLIT_GAP_US: u64 = 61_000_000;

struct Endpoints {
    c_ip: IpAddr,
    s_ip: IpAddr,
    c_mac: [u8; 6],
    s_mac: [u8; 6],
    c_port: u16,
    s_port: u16,
    c_ttl: u8,
    s_ttl: u8,
}

struct FlowBuilder<'a> {
    ep: Endpoints,
    rng: &'a mut SplitMix64,
    t: u64,
    out: Vec<CanonicalPacket>,
}

impl FlowBuilder<'_> {
    fn payload(&mut self, len: u16) -> Vec<u8> {
        let mut p = vec![0; usize::from(len)];
        self.rng.fill_bytes(&mut p);
        p
    }

    fn push(&mut self, from_client: bool, transport: Transport, payload: Vec<u8>) {
        let e = &self.ep;
        let (src_ip, dst_ip, src_mac, dst_mac, ttl) = if from_client {
            (e.c_ip, e.s_ip, e.c_mac, e.s_mac, e.c_ttl)
        } else {
            (e.s_ip, e.c_ip, e.s_mac, e.c_mac, e.s_ttl)
        };
        self.out.push(CanonicalPacket {
            ts_us: self.t,
            src_mac,
            dst_mac,
            src_ip,
            dst_ip,
            ttl,
            transport,
            payload_len: payload.len() as u16,
            payload,
        });
    }

    fn wait(&mut self, mean_us: u64) {
        let u = self.rng.unit();
        let gap = (-(1.0 - u).ln() * mean_us as f64) as u64;
        self.t += gap.clamp(1, MAX_INNER_GAP_US);
    }
}

struct TcpSide {
    next: u32,
    window: u16,
}

struct TcpFlow<'a, 'b> {
    b: &'b mut FlowBuilder<'a>,
    c: TcpSide,
    s: TcpSide,
    opts: TcpOptProfile,
    rtt_us: u64,
}

impl TcpFlow<'_, '_> {
    fn send(
        &mut self,
        from_client: bool,
        seq: u32,
        flags: TcpFlags,
        len: u16,
        window: Option<u16>,
        opts: TcpOptProfile,
    ) {
        let (me, peer) = if from_client {
            (&self.c, &self.s)
        } else {
            (&self.s, &self.c)
        };
        let t = TcpFields {
            src_port: if from_client {
                self.b.ep.c_port
            } else {
                self.b.ep.s_port
            },
            dst_port: if from_client {
                self.b.ep.s_port
            } else {
                self.b.ep.c_port
            },
            seq,
            ack: if flags.ack() { peer.next } else { 0 },
            flags,
            window: window.unwrap_or(me.window),
            options: opts,
        };
        let payload = self.b.payload(len);
        self.b.push(from_client, Transport::Tcp(t), payload);
    }

    /// Sends new data from one side, advancing its sequence space.
    fn data(&mut self, from_client: bool, len: u16) -> u32 {
        let seq = self.side(from_client).next;
        self.send(
            from_client,
            seq,
            TcpFlags::ACK | TcpFlags::PSH,
            len,
            None,
            self.opts,
        );
        self.side(from_client).next = seq.wrapping_add(u32::from(len));
        seq
    }

    fn side(&mut self, from_client: bool) -> &mut TcpSide {
        if from_client {
            &mut self.c
        } else {
            &mut self.s
        }
    }

    fn ack(&mut self, from_client: bool, window: Option<u16>) {
        let seq = self.side(from_client).next;
        self.send(from_client, seq, TcpFlags::ACK, 0, window, self.opts);
    }

    fn small_gap(&mut self) {
        self.b.t += 1 + self.b.rng.below(self.rtt_us / 8 + 1);
    }
}

fn client_ip(flow: u32, v6: bool) -> IpAddr {
    if v6 {
        IpAddr::V6(Ipv6Addr::new(
            0x2001,
            0xdb8,
            1,
            0,
            0,
            0,
            (flow >> 16) as u16,
            flow as u16,
        ))
    } else {
        IpAddr::V4(Ipv4Addr::from(0x6440_0000u32 + flow + 1))
    }
}

fn server_ip(idx: u64, v6: bool) -> IpAddr {
    if v6 {
        IpAddr::V6(Ipv6Addr::new(
            0x2001,
            0xdb8,
            0xff,
            0,
            0,
            0,
            0,
            idx as u16 + 1,
        ))
    } else {
        IpAddr::V4(Ipv4Addr::new(198, 51, 100, idx as u8 + 1))
    }
}

fn mac(rng: &mut SplitMix64) -> [u8; 6] {
    let b = rng.next_u64().to_le_bytes();
    [0x00, 0x16, 0x3e, b[0], b[1], b[2]]
}

fn endpoints(rng: &mut SplitMix64, flow: u32, family: IpFamily, server_port: u16) -> Endpoints {
    let v6 = family == IpFamily::V6;
    let server = rng.below(16);
    let s_ttl = match rng.below(3) {
        0 => 64,
        1 => 128,
        _ => 255,
    };
    Endpoints {
        c_ip: client_ip(flow, v6),
        s_ip: server_ip(server, v6),
        c_mac: mac(rng),
        s_mac: mac(rng),
        c_port: 32768 + rng.below(28000) as u16,
        s_port: server_port,
        c_ttl: 64 - rng.below(3) as u8,
        s_ttl: s_ttl - rng.below(20) as u8,
    }
}

fn rounds(rng: &mut SplitMix64, mean: f64) -> u32 {
    let u = rng.unit();
    1 + ((-(1.0 - u).ln()) * (mean - 1.0)).round() as u32
}

fn gen_tcp(b: &mut FlowBuilder<'_>, cfg: &SynthConfig, inj: &mut InjectedEvents) -> CloseReason {
    let rtt_us = 200 + b.rng.below(40_000);
    let ts = b.rng.chance(0.8);
    let mut f = TcpFlow {
        c: TcpSide {
            next: b.rng.next_u64() as u32,
            window: 64240,
        },
        s: TcpSide {
            next: b.rng.next_u64() as u32,
            window: 65160,
        },
        opts: if ts {
            TcpOptProfile::TsOnly
        } else {
            TcpOptProfile::None
        },
        rtt_us,
        b,
    };
    let syn_opts = if ts {
        TcpOptProfile::MssSackTsWs
    } else {
        TcpOptProfile::MssOnly
    };
    let c_isn = f.c.next;
    f.send(true, c_isn, TcpFlags::SYN, 0, None, syn_opts);
    f.c.next = c_isn.wrapping_add(1);
    f.b.t += rtt_us / 2;
    let s_isn = f.s.next;
    f.send(
        false,
        s_isn,
        TcpFlags::SYN | TcpFlags::ACK,
        0,
        None,
        syn_opts,
    );
    f.s.next = s_isn.wrapping_add(1);
    f.b.t += rtt_us / 2;
    f.ack(true, None);

    let n_rounds = rounds(f.b.rng, cfg.mean_rounds);
    for _ in 0..n_rounds {
        f.small_gap();
        let req = 40 + f.b.rng.below(560) as u16;
        f.data(true, req);
        f.b.t += rtt_us / 2;
        let n_seg = 1 + f.b.rng.below(u64::from(cfg.max_response_segments)) as u32;
        let total =
            u32::from(MSS_PAYLOAD) * (n_seg - 1) + 1 + f.b.rng.below(u64::from(MSS_PAYLOAD)) as u32;
        let lens: Vec<u16> = (0..n_seg)
            .map(|i| {
                if i + 1 < n_seg {
                    MSS_PAYLOAD
                } else {
                    (total - u32::from(MSS_PAYLOAD) * (n_seg - 1)) as u16
                }
            })
            .collect();
        let pending = send_response(&mut f, &lens, cfg, inj);
        f.b.t += rtt_us / 2;
        if f.b.rng.chance(0.02) {
            f.ack(true, Some(0));
            inj.zero_windows += 1;
            f.b.wait(rtt_us);
            f.ack(true, None);
        } else if pending {
            f.ack(true, None);
        }
        f.b.wait(cfg.iat_scale_us);
    }

    if f.b.rng.chance(cfg.rst_fraction) {
        let from_client = f.b.rng.chance(0.5);
        let seq = f.side(from_client).next;
        f.send(
            from_client,
            seq,
            TcpFlags::RST | TcpFlags::ACK,
            0,
            Some(0),
            TcpOptProfile::None,
        );
        return CloseReason::Rst;
    }
    let fin = TcpFlags::FIN | TcpFlags::ACK;
    let first_client = f.b.rng.chance(0.7);
    let seq = f.side(first_client).next;
    f.send(first_client, seq, fin, 0, None, f.opts);
    f.side(first_client).next = seq.wrapping_add(1);
    f.b.t += rtt_us / 2;
    let seq = f.side(!first_client).next;
    f.send(!first_client, seq, fin, 0, None, f.opts);
    f.side(!first_client).next = seq.wrapping_add(1);
    f.b.t += rtt_us / 2;
    f.ack(first_client, None);
    CloseReason::Fin
}

/// Server response segments with client ACKs every second segment, plus injected
/// duplicates, swaps and capture losses. Returns whether unacknowledged segments remain.
fn send_response(
    f: &mut TcpFlow<'_, '_>,
    lens: &[u16],
    cfg: &SynthConfig,
    inj: &mut InjectedEvents,
) -> bool {
    let mut i = 0;
    let mut since_ack = 0;
    while i < lens.len() {
        f.small_gap();
        let r = f.b.rng.unit();
        if r < cfg.reorder_rate && i + 1 < lens.len() {
            // Second segment overtakes the first.
            let seq0 = f.s.next;
            let seq1 = seq0.wrapping_add(u32::from(lens[i]));
            f.s.next = seq1.wrapping_add(u32::from(lens[i + 1]));
            let opts = f.opts;
            f.send(
                false,
                seq1,
                TcpFlags::ACK | TcpFlags::PSH,
                lens[i + 1],
                None,
                opts,
            );
            f.small_gap();
            f.send(
                false,
                seq0,
                TcpFlags::ACK | TcpFlags::PSH,
                lens[i],
                None,
                opts,
            );
            inj.reorders += 1;
            i += 2;
            since_ack += 2;
        } else if r < cfg.reorder_rate + cfg.loss_rate && i + 1 < lens.len() {
            // The capture misses segment i; three duplicate ACKs trigger its resend.
            let lost_seq = f.s.next;
            let after = lost_seq.wrapping_add(u32::from(lens[i]));
            f.s.next = after;
            let opts = f.opts;
            let acked = f.c.next;
            let dup_ack = |f: &mut TcpFlow<'_, '_>| {
                let fields = TcpFields {
                    src_port: f.b.ep.c_port,
                    dst_port: f.b.ep.s_port,
                    seq: acked,
                    ack: lost_seq,
                    flags: TcpFlags::ACK,
                    window: f.c.window,
                    options: opts,
                };
                f.b.push(true, Transport::Tcp(fields), Vec::new());
            };
            f.data(false, lens[i + 1]);
            for _ in 0..4 {
                f.small_gap();
                dup_ack(f);
            }
            f.small_gap();
            f.send(
                false,
                lost_seq,
                TcpFlags::ACK | TcpFlags::PSH,
                lens[i],
                None,
                opts,
            );
            inj.losses += 1;
            i += 2;
            since_ack += 2;
        } else {
            let seq = f.data(false, lens[i]);
            if f.b.rng.chance(cfg.retransmission_rate) {
                f.small_gap();
                let opts = f.opts;
                f.send(
                    false,
                    seq,
                    TcpFlags::ACK | TcpFlags::PSH,
                    lens[i],
                    None,
                    opts,
                );
                inj.retransmissions += 1;
            }
            i += 1;
            since_ack += 1;
        }
        if since_ack >= 2 {
            f.small_gap();
            f.ack(true, None);
            since_ack = 0;
        }
    }
    since_ack > 0
}

fn gen_udp(b: &mut FlowBuilder<'_>, cfg: &SynthConfig, split: bool) -> Vec<u64> {
    let mut boundaries = Vec::new();
    let bursts = rounds(b.rng, cfg.mean_rounds);
    let split_after = if split {
        Some(b.rng.below(u64::from(bursts)))
    } else {
        None
    };
    for k in 0..u64::from(bursts) {
        let req = 20 + b.rng.below(200) as u16;
        let p = b.payload(req);
        let ports = UdpFields {
            src_port: b.ep.c_port,
            dst_port: b.ep.s_port,
        };
        b.push(true, Transport::Udp(ports), p);
        for _ in 0..1 + b.rng.below(3) {
            b.t += 100 + b.rng.below(20_000);
            let len = 40 + b.rng.below(1200) as u16;
            let p = b.payload(len);
            let back = UdpFields {
                src_port: b.ep.s_port,
                dst_port: b.ep.c_port,
            };
            b.push(false, Transport::Udp(back), p);
        }
        if split_after == Some(k) && k + 1 < u64::from(bursts) {
            boundaries.push(b.out.len() as u64);
            b.t += IDLE_SPLIT_GAP_US + b.rng.below(1_000_000);
        } else {
            b.wait(cfg.iat_scale_us * 10);
        }
    }
    boundaries
}

fn gen_icmp(b: &mut FlowBuilder<'_>, cfg: &SynthConfig, v6: bool) {
    let (req_t, rep_t) = if v6 { (128, 129) } else { (8, 0) };
    let ident = b.rng.below(65536) as u16;
    let pairs = rounds(b.rng, cfg.mean_rounds);
    let data_len = 56;
    for seq in 0..pairs as u16 {
        let mut p = Vec::with_capacity(4 + data_len);
        p.extend_from_slice(&ident.to_be_bytes());
        p.extend_from_slice(&seq.to_be_bytes());
        p.extend(b.payload(data_len as u16));
        b.push(
            true,
            Transport::Icmp(IcmpFields {
                icmp_type: req_t,
                icmp_code: 0,
            }),
            p.clone(),
        );
        b.t += 100 + b.rng.below(30_000);
        b.push(
            false,
            Transport::Icmp(IcmpFields {
                icmp_type: rep_t,
                icmp_code: 0,
            }),
            p,
        );
        b.t += 1_000_000 + b.rng.below(10_000);
    }
}

/// Generates a trace. Identical configurations give identical traces.
pub fn generate(cfg: &SynthConfig) -> SynthTrace {
    let mut rng = SplitMix64::new(cfg.seed);
    let n_flows = cfg.tcp_flows + cfg.udp_flows + cfg.icmp_flows;
    let mut protos: Vec<Proto> = std::iter::repeat_n(Proto::Tcp, cfg.tcp_flows as usize)
        .chain(std::iter::repeat_n(Proto::Udp, cfg.udp_flows as usize))
        .chain(std::iter::repeat_n(Proto::Icmp, cfg.icmp_flows as usize))
        .collect();
    for i in (1..protos.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        protos.swap(i, j);
    }

    let mean_spacing = cfg.duration_us as f64 / f64::from(n_flows.max(1));
    let mut start = cfg.epoch_us;
    let mut tagged: Vec<(u64, u32, u32, CanonicalPacket)> = Vec::new();
    let mut sessions = Vec::new();
    let mut injected = InjectedEvents::default();

    for (flow, &proto) in protos.iter().enumerate() {
        let flow = flow as u32;
        if flow > 0 {
            start += (-(1.0 - rng.unit()).ln() * mean_spacing) as u64;
        }
        let family = if rng.chance(cfg.ipv6_fraction) {
            IpFamily::V6
        } else {
            IpFamily::V4
        };
        let port = match proto {
            Proto::Tcp => [443, 80, 22, 8080][rng.below(4) as usize],
            Proto::Udp => [53, 123, 443, 5353][rng.below(4) as usize],
            Proto::Icmp => 0,
        };
        let ep = endpoints(&mut rng, flow, family, port);
        let mut b = FlowBuilder {
            ep,
            rng: &mut rng,
            t: start,
            out: Vec::new(),
        };
        let (close, cuts) = match proto {
            Proto::Tcp => (gen_tcp(&mut b, cfg, &mut injected), Vec::new()),
            Proto::Udp => {
                let split = b.rng.chance(cfg.idle_split_fraction);
                (CloseReason::TraceEnd, gen_udp(&mut b, cfg, split))
            }
            Proto::Icmp => {
                gen_icmp(&mut b, cfg, family == IpFamily::V6);
                (CloseReason::TraceEnd, Vec::new())
            }
        };
        let pkts = b.out;
        let mut bounds = vec![0u64];
        bounds.extend(cuts);
        bounds.push(pkts.len() as u64);
        for w in bounds.windows(2) {
            let (lo, hi) = (w[0] as usize, w[1] as usize);
            let last = hi == pkts.len();
            sessions.push(TruthSession {
                flow,
                proto,
                start_ts_us: pkts[lo].ts_us,
                end_ts_us: pkts[hi - 1].ts_us,
                packets: (hi - lo) as u64,
                close_reason: if last { close } else { CloseReason::Idle },
            });
        }
        for (k, p) in pkts.into_iter().enumerate() {
            tagged.push((p.ts_us, flow, k as u32, p));
        }
    }
    tagged.sort_by_key(|(ts, flow, k, _)| (*ts, *flow, *k));
    sessions.sort_by_key(|s| (s.start_ts_us, s.flow));
    let packets: Vec<CanonicalPacket> = tagged.into_iter().map(|t| t.3).collect();
    SynthTrace {
        manifest: SynthManifest {
            config: cfg.clone(),
            packets: packets.len() as u64,
            flows: n_flows,
            sessions,
            injected,
        },
        packets,
    }
}
