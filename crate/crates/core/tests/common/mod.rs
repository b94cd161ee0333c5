#![allow(dead_code)]

pub mod micro;

use pktact::compiler::{compile, CompileConfig, CompileOutput};
use pktact::lift::{lift_trace, LiftConfig, LiftOutput};
use pktact::packet::{decode_frame, encode_frame, CanonicalPacket};
use pktact::pcap::{read_pcap, write_pcap, Frame, DEFAULT_SNAPLEN};
use pktact::synth::{generate, SynthConfig, SynthTrace};

/// Encodes packets and writes them as a capture file image.
pub fn to_pcap(packets: &[CanonicalPacket]) -> Vec<u8> {
    let frames: Vec<(u64, Vec<u8>)> = packets
        .iter()
        .map(|p| (p.ts_us, encode_frame(p).expect("encodable")))
        .collect();
    write_pcap(
        frames.iter().map(|(t, f)| (*t, f.as_slice())),
        DEFAULT_SNAPLEN,
        false,
    )
    .expect("writable")
}

pub fn frames(pcap: &[u8]) -> Vec<Frame> {
    read_pcap(pcap).expect("readable")
}

pub fn decode_all(frames: &[Frame]) -> Vec<CanonicalPacket> {
    frames
        .iter()
        .map(|f| {
            decode_frame(&f.data, f.ts_us)
                .packet()
                .expect("in decode scope")
        })
        .collect()
}

/// Reference trace as it would come off disk.
pub fn reference(cfg: &SynthConfig) -> (SynthTrace, Vec<u8>, Vec<CanonicalPacket>) {
    let trace = generate(cfg);
    let pcap = to_pcap(&trace.packets);
    let decoded = decode_all(&frames(&pcap));
    (trace, pcap, decoded)
}

pub fn desk_config() -> SynthConfig {
    SynthConfig {
        seed: 7,
        ..Default::default()
    }
}

pub struct Roundtrip {
    pub lifted: LiftOutput,
    pub compiled: CompileOutput,
    pub pcap: Vec<u8>,
    pub decoded: Vec<CanonicalPacket>,
}

pub fn roundtrip(packets: &[CanonicalPacket], salt: u64) -> Roundtrip {
    let lifted = lift_trace(packets, &LiftConfig::default()).expect("liftable");
    let cfg = CompileConfig {
        salt,
        epoch_us: lifted.header.epoch_us,
        ..Default::default()
    };
    let compiled = compile(&lifted.actions, &cfg).expect("compilable");
    let pcap = to_pcap(&compiled.packets);
    let decoded = decode_all(&frames(&pcap));
    Roundtrip {
        lifted,
        compiled,
        pcap,
        decoded,
    }
}

/// Arbitrary but schema-valid actions over a handful of slots, for exercising coercions.
pub fn random_actions(seed: u64, n: usize) -> Vec<pktact::lift::ActionRecord> {
    use pktact::flowtable::SplitMix64;
    use pktact::lift::{ActionRecord, Dir, FlowEvt, LastDir, SeqSign, TcpCtrl};
    use pktact::{IpFamily, Proto, TcpOptProfile};

    let mut rng = SplitMix64::new(seed);
    let slots = 1 + rng.below(4) as u32;
    let digits = |rng: &mut SplitMix64, k: usize, small: bool| -> Vec<u8> {
        (0..k)
            .map(|i| {
                if small && i + 2 < k {
                    0
                } else {
                    rng.below(16) as u8
                }
            })
            .collect()
    };
    let pick_proto = |rng: &mut SplitMix64| match rng.below(10) {
        0 => Proto::Udp,
        1 => Proto::Icmp,
        _ => Proto::Tcp,
    };
    let pick_family = |rng: &mut SplitMix64| {
        if rng.chance(0.3) {
            IpFamily::V6
        } else {
            IpFamily::V4
        }
    };
    // Per slot: generation, protocol, family. Mostly coherent, with occasional noise.
    let mut episodes: Vec<(u32, Proto, IpFamily)> = (0..slots)
        .map(|_| (0, pick_proto(&mut rng), pick_family(&mut rng)))
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let slot = rng.below(u64::from(slots)) as usize;
        if rng.chance(0.08) {
            episodes[slot] = (
                episodes[slot].0 + 1,
                pick_proto(&mut rng),
                pick_family(&mut rng),
            );
        }
        let (mut generation, mut proto, mut ip_family) = episodes[slot];
        if rng.chance(0.03) {
            generation = rng.below(u64::from(generation) + 2) as u32;
        }
        if rng.chance(0.03) {
            proto = pick_proto(&mut rng);
            ip_family = pick_family(&mut rng);
        }
        let tcp_ctrl = if proto == Proto::Tcp {
            TcpCtrl::LABELS[rng.below(6) as usize]
        } else {
            TcpCtrl::None
        };
        let small = rng.chance(0.8);
        let a = ActionRecord {
            flow_token: slot as u32,
            generation,
            flow_evt: [FlowEvt::Open, FlowEvt::Continue, FlowEvt::Close][rng.below(3) as usize],
            proto,
            ip_family,
            dir: if rng.chance(0.5) {
                Dir::AToB
            } else {
                Dir::BToA
            },
            tcp_ctrl,
            tcp_opt_profile: TcpOptProfile::ALL[rng.below(5) as usize],
            tcp_win_d: digits(&mut rng, 4, false).try_into().unwrap(),
            tcp_ack_adv_d: digits(&mut rng, 8, small).try_into().unwrap(),
            tcp_ack_unseen: rng.chance(0.1),
            tcp_seq_delta_sign: if rng.chance(0.3) {
                SeqSign::Neg
            } else {
                SeqSign::Nonneg
            },
            tcp_seq_delta_d: digits(&mut rng, 8, small).try_into().unwrap(),
            ttl_res: rng.below(128) as u8,
            icmp_type: [0, 3, 8, 11][rng.below(4) as usize],
            icmp_code: rng.below(4) as u8,
            l4_payload_len_d: [
                0,
                rng.below(6) as u8,
                rng.below(16) as u8,
                rng.below(16) as u8,
            ],
            ctx_gap_b: rng.below(16) as u8,
            ctx_pkt_count_b: rng.below(9) as u8,
            ctx_last_payload_b: rng.below(8) as u8,
            ctx_ack_streak_b: rng.below(9) as u8,
            ctx_last_dir: [LastDir::None, LastDir::AToB, LastDir::BToA][rng.below(3) as usize],
            delta_t_us: rng.below(5_000_000),
        };
        out.push(a);
    }
    out
}

/// Per-record unseen-ACK marks for a compiled capture.
pub fn unseen_marks(actions: &[pktact::lift::ActionRecord], source: &[usize]) -> Vec<bool> {
    source.iter().map(|&i| actions[i].tcp_ack_unseen).collect()
}
