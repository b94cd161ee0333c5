//! Packet-action toolchain: lifts Ethernet PCAP traces into a timed, per-packet action IR,
//! compiles action sequences back into legal synthetic PCAPs, and measures how faithfully a
//! decoded trace reproduces a reference.
//!
//! Layering:
//! - [`packet`] and [`pcap`] speak bytes.
//! - [`lift`] turns canonical packets into [`lift::ActionRecord`]s.
//! - [`flowtable`] and [`compiler`] lower actions back to packets under explicit TCP state.
//! - [`metrics`] compares reference and decoded traces; [`shard`] and [`synth`] build inputs.

pub mod compiler;
pub mod flow;
pub mod flowtable;
pub mod lift;
pub mod manifest;
pub mod metrics;
pub mod packet;
pub mod pcap;
pub mod shard;
pub mod synth;
pub mod validate;

pub use packet::{
    CanonicalPacket, DecodeOutcome, IpFamily, Proto, SkipReason, TcpFlags, TcpOptProfile,
};
