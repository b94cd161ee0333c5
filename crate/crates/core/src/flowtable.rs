//! Deterministic synthetic endpoint templates keyed by flow-slot coordinates and a salt.
//!
//! Every field is derived from a SplitMix64-finalized fold of a 16-byte message
//! `(salt, token | generation | proto | family | field tag)`, so two implementations of the
//! same derivation agree byte for byte. No packet data ever enters a template.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::Serialize;

use crate::packet::{IpFamily, Proto};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds 64-bit words by `state = (state ^ w) * GOLDEN` from zero, then finalizes.
pub fn fold_words(words: &[u64]) -> u64 {
    let state = words
        .iter()
        .fold(0u64, |s, &w| (s ^ w).wrapping_mul(GOLDEN));
    splitmix_finalize(state)
}

/// Plain SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix_finalize(self.state)
    }

    /// Uniform in `[0, n)` by multiply-shift; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) {
        for chunk in out.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub(crate) enum FieldTag {
    AIp = 1,
    BIp = 2,
    AIpLow = 3,
    BIpLow = 4,
    APort = 5,
    BPort = 6,
    AMac = 7,
    BMac = 8,
    IsnA = 9,
    IsnB = 10,
    Payload = 11,
}

fn proto_nibble(p: Proto) -> u64 {
    match p {
        Proto::Tcp => 0,
        Proto::Udp => 1,
        Proto::Icmp => 2,
    }
}

fn family_nibble(f: IpFamily) -> u64 {
    match f {
        IpFamily::V4 => 0,
        IpFamily::V6 => 1,
    }
}

/// Second message word: token (16 bits) | generation (32) | proto (4) | family (4) | tag (8).
pub(crate) fn coord_word(
    token: u16,
    generation: u32,
    proto: Proto,
    family: IpFamily,
    tag: FieldTag,
) -> u64 {
    (u64::from(token) << 48)
        | (u64::from(generation) << 16)
        | (proto_nibble(proto) << 12)
        | (family_nibble(family) << 8)
        | tag as u64
}

/// Synthetic endpoints for one (slot, generation). `a` is the episode initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct FlowTemplate {
    pub a_mac: [u8; 6],
    pub b_mac: [u8; 6],
    pub a_ip: IpAddr,
    pub b_ip: IpAddr,
    pub a_port: u16,
    pub b_port: u16,
    pub isn_a: u32,
    pub isn_b: u32,
}

fn v4_host_octet(b: u8) -> u8 {
    1 + b % 254
}

fn v4_from(h: u64) -> [u8; 4] {
    let b = h.to_le_bytes();
    [
        10,
        v4_host_octet(b[0]),
        v4_host_octet(b[1]),
        v4_host_octet(b[2]),
    ]
}

/// Next address in 10/8 skipping host octets 0 and 255, wrapping within the prefix.
fn v4_increment(mut ip: [u8; 4]) -> [u8; 4] {
    for i in (1..4).rev() {
        if ip[i] < 254 {
            ip[i] += 1;
            return ip;
        }
        ip[i] = 1;
    }
    ip
}

fn v6_from(hi: u64, lo: u64) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[0] = 0xFD;
    out[1..9].copy_from_slice(&hi.to_be_bytes());
    out[9..16].copy_from_slice(&lo.to_be_bytes()[..7]);
    out
}

fn v6_increment(mut ip: [u8; 16]) -> [u8; 16] {
    for i in (1..16).rev() {
        let (v, carry) = ip[i].overflowing_add(1);
        ip[i] = v;
        if !carry {
            break;
        }
    }
    ip
}

fn mac_from(h: u64) -> [u8; 6] {
    let b = h.to_le_bytes();
    [0x02, b[0], b[1], b[2], b[3], b[4]]
}

/// Resolves the endpoint template for a flow slot. Pure and deterministic.
pub fn resolve_template(
    token: u16,
    proto: Proto,
    family: IpFamily,
    generation: u32,
    salt: u64,
) -> FlowTemplate {
    let h = |tag| fold_words(&[salt, coord_word(token, generation, proto, family, tag)]);
    let (a_ip, b_ip) = match family {
        IpFamily::V4 => {
            let a = v4_from(h(FieldTag::AIp));
            let mut b = v4_from(h(FieldTag::BIp));
            if a == b {
                b = v4_increment(b);
            }
            (IpAddr::V4(Ipv4Addr::from(a)), IpAddr::V4(Ipv4Addr::from(b)))
        }
        IpFamily::V6 => {
            let a = v6_from(h(FieldTag::AIp), h(FieldTag::AIpLow));
            let mut b = v6_from(h(FieldTag::BIp), h(FieldTag::BIpLow));
            if a == b {
                b = v6_increment(b);
            }
            (IpAddr::V6(Ipv6Addr::from(a)), IpAddr::V6(Ipv6Addr::from(b)))
        }
    };
    FlowTemplate {
        a_mac: mac_from(h(FieldTag::AMac)),
        b_mac: mac_from(h(FieldTag::BMac)),
        a_ip,
        b_ip,
        a_port: 49152 + (h(FieldTag::APort) % 16384) as u16,
        b_port: 1 + (h(FieldTag::BPort) % 49151) as u16,
        isn_a: h(FieldTag::IsnA) as u32,
        isn_b: h(FieldTag::IsnB) as u32,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn splitmix_reference_vector() {
        // First outputs of SplitMix64 seeded with 0 (published reference values).
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(g.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn fold_is_pinned() {
        // One-word fold of zero equals the finalizer of zero.
        assert_eq!(fold_words(&[0]), 0);
        assert_eq!(fold_words(&[1]), splitmix_finalize(GOLDEN));
    }

    #[test]
    fn deterministic() {
        let a = resolve_template(7, Proto::Tcp, IpFamily::V4, 3, 42);
        let b = resolve_template(7, Proto::Tcp, IpFamily::V4, 3, 42);
        assert_eq!(a, b);
    }

    fn check_invariants(t: &FlowTemplate, family: IpFamily) {
        assert_ne!(t.a_ip, t.b_ip);
        match (t.a_ip, t.b_ip) {
            (IpAddr::V4(a), IpAddr::V4(b)) => {
                assert_eq!(family, IpFamily::V4);
                for ip in [a.octets(), b.octets()] {
                    assert_eq!(ip[0], 10);
                    assert!(ip[1..].iter().all(|&o| o != 0 && o != 255));
                }
            }
            (IpAddr::V6(a), IpAddr::V6(b)) => {
                assert_eq!(family, IpFamily::V6);
                assert_eq!(a.octets()[0], 0xFD);
                assert_eq!(b.octets()[0], 0xFD);
            }
            _ => panic!("mixed family"),
        }
        assert!(t.a_port >= 49152);
        assert!((1..=49151).contains(&t.b_port));
        for mac in [t.a_mac, t.b_mac] {
            assert_eq!(mac[0], 0x02);
        }
    }

    #[test]
    fn invariants_hold_over_many_slots() {
        for token in 0..2000u16 {
            for family in [IpFamily::V4, IpFamily::V6] {
                let t = resolve_template(token, Proto::Udp, family, u32::from(token) * 3, 9);
                check_invariants(&t, family);
            }
        }
    }

    #[test]
    fn v4_increment_wraps_and_skips_edges() {
        assert_eq!(v4_increment([10, 1, 1, 254]), [10, 1, 2, 1]);
        assert_eq!(v4_increment([10, 254, 254, 254]), [10, 1, 1, 1]);
        assert_eq!(
            v6_increment([
                0xFD, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,
                0xFF, 0xFF
            ])[0],
            0xFD
        );
    }

    #[test]
    fn salts_change_every_template() {
        for token in 0..10_000u32 {
            let tok = (token % 4096) as u16;
            let gen = token / 4096;
            let a = resolve_template(tok, Proto::Tcp, IpFamily::V4, gen, 1);
            let b = resolve_template(tok, Proto::Tcp, IpFamily::V4, gen, 2);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn no_five_tuple_collisions() {
        let mut seen = HashSet::new();
        for i in 0..100_000u32 {
            let token = (i % 4096) as u16;
            let gen = i / 4096;
            let t = resolve_template(token, Proto::Tcp, IpFamily::V4, gen, 77);
            assert!(
                seen.insert((t.a_ip, t.a_port, t.b_ip, t.b_port)),
                "collision at {i}"
            );
        }
    }
}
