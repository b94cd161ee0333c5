use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::diag::{tcp_diagnostics, tcp_event_distance_pp, TcpEvent, TcpEventCounts};
use super::hist::{coverage_adjusted_tv, tv, tv_distance, Histogram, Schedule, SCHEDULE_VERSION};
use super::session::sessionize;
use super::structure::{transition_distance, Interleaving, InterleavingStats, TransitionMatrix};
use crate::packet::{decode_frame, CanonicalPacket, Proto};
use crate::pcap::Frame;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything the metrics need from one trace. Summaries of several shards pool by addition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Records in the capture, decodable or not.
    pub records: u64,
    /// Records decoded to a TCP, UDP or ICMP packet.
    pub valid_packets: u64,
    /// TCP, UDP, ICMP, other.
    pub proto_counts: [u64; 4],
    pub iat: Histogram,
    pub pkt_size: Histogram,
    pub sess_dur: Histogram,
    pub flow_pkts: Histogram,
    pub sessions: u64,
    pub tcp_events: TcpEventCounts,
    pub transitions: TransitionMatrix,
    pub interleaving: Interleaving,
}

impl TraceSummary {
    pub fn empty() -> Self {
        Self {
            records: 0,
            valid_packets: 0,
            proto_counts: [0; 4],
            iat: Histogram::new(Schedule::IatMs),
            pkt_size: Histogram::new(Schedule::PktSize),
            sess_dur: Histogram::new(Schedule::DurMsLog2),
            flow_pkts: Histogram::new(Schedule::FlowPkts),
            sessions: 0,
            tcp_events: TcpEventCounts::default(),
            transitions: TransitionMatrix::default(),
            interleaving: Interleaving::default(),
        }
    }

    /// Summarizes decoded packets; `undecoded` counts records that did not decode.
    pub fn from_packets(packets: &[CanonicalPacket], undecoded: u64) -> Self {
        let mut s = Self::empty();
        s.records = packets.len() as u64 + undecoded;
        s.valid_packets = packets.len() as u64;
        s.proto_counts[3] = undecoded;
        for (i, p) in packets.iter().enumerate() {
            let idx = match p.proto() {
                Proto::Tcp => 0,
                Proto::Udp => 1,
                Proto::Icmp => 2,
            };
            s.proto_counts[idx] += 1;
            s.pkt_size.record(p.wire_len() as u64);
            if i > 0 {
                s.iat.record(p.ts_us.saturating_sub(packets[i - 1].ts_us));
            }
        }
        let sz = sessionize(packets);
        for sess in &sz.sessions {
            s.sess_dur.record(sess.duration_us());
            s.flow_pkts.record(sess.packets);
        }
        s.sessions = sz.sessions.len() as u64;
        s.tcp_events = tcp_diagnostics(packets, &sz);
        s.transitions = TransitionMatrix::from_trace(packets, &sz);
        s.interleaving = Interleaving::from_labels(&sz.labels, sz.sessions.len());
        s
    }

    /// Decodes raw frames and summarizes them.
    pub fn from_frames(frames: &[Frame]) -> Self {
        let mut packets = Vec::with_capacity(frames.len());
        let mut undecoded = 0;
        for f in frames {
            match decode_frame(&f.data, f.ts_us).packet() {
                Some(p) => packets.push(p),
                None => undecoded += 1,
            }
        }
        Self::from_packets(&packets, undecoded)
    }

    /// Replaces the native diagnostic counts with externally produced ones.
    pub fn with_tcp_events(mut self, counts: TcpEventCounts) -> Self {
        self.tcp_events = counts;
        self
    }

    pub fn add(&mut self, other: &TraceSummary) {
        self.records += other.records;
        self.valid_packets += other.valid_packets;
        for (a, b) in self.proto_counts.iter_mut().zip(other.proto_counts) {
            *a += b;
        }
        for (a, b) in [
            (&mut self.iat, &other.iat),
            (&mut self.pkt_size, &other.pkt_size),
            (&mut self.sess_dur, &other.sess_dur),
            (&mut self.flow_pkts, &other.flow_pkts),
        ] {
            a.merge(b).expect("summaries share schedules");
        }
        self.sessions += other.sessions;
        self.tcp_events.add(&other.tcp_events);
        self.transitions.add(&other.transitions);
        self.interleaving.add(&other.interleaving);
    }
}

fn relative_error(reference: u64, decoded: u64) -> f64 {
    reference.abs_diff(decoded) as f64 / reference.max(1) as f64
}

fn proto_ratios(counts: &[u64; 4]) -> [f64; 4] {
    let n: u64 = counts.iter().sum();
    counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Scalar fidelity metrics for one reference/decoded pair. Distances are fractions except
/// `tcp_event_distance_pp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub count_err: f64,
    pub proto_tv: f64,
    pub iat_tv: f64,
    pub flow_count_err: f64,
    pub flow_dur_tv: f64,
    pub tcp_event_distance_pp: f64,
    pub pkt_size_tv: f64,
    pub flow_pkts_tv: f64,
    pub transition_distance: f64,
    /// Valid decoded packets over reference packets, capped at 1.
    pub coverage: f64,
    pub ca_iat_tv: f64,
    pub ca_pkt_size_tv: f64,
    pub ca_flow_pkts_tv: f64,
    pub ca_sess_dur_tv: f64,
    pub ref_interleaving: InterleavingStats,
    pub dec_interleaving: InterleavingStats,
}

pub fn scalar_metrics(r: &TraceSummary, d: &TraceSummary) -> ScalarMetrics {
    let tvd = |a: &Histogram, b: &Histogram| tv_distance(a, b).expect("shared schedule");
    let coverage = if r.records == 0 {
        if d.valid_packets == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (d.valid_packets as f64 / r.records as f64).min(1.0)
    };
    let ca = |a: &Histogram, b: &Histogram| {
        coverage_adjusted_tv(a, b, coverage).expect("shared schedule")
    };
    let proto_tv = if r.records == 0 && d.records == 0 {
        0.0
    } else {
        tv(
            &proto_ratios(&r.proto_counts),
            &proto_ratios(&d.proto_counts),
        )
    };
    ScalarMetrics {
        count_err: relative_error(r.records, d.records),
        proto_tv,
        iat_tv: tvd(&r.iat, &d.iat),
        flow_count_err: relative_error(r.sessions, d.sessions),
        flow_dur_tv: tvd(&r.sess_dur, &d.sess_dur),
        tcp_event_distance_pp: tcp_event_distance_pp(&r.tcp_events, &d.tcp_events),
        pkt_size_tv: tvd(&r.pkt_size, &d.pkt_size),
        flow_pkts_tv: tvd(&r.flow_pkts, &d.flow_pkts),
        transition_distance: transition_distance(&r.transitions, &d.transitions),
        coverage,
        ca_iat_tv: ca(&r.iat, &d.iat),
        ca_pkt_size_tv: ca(&r.pkt_size, &d.pkt_size),
        ca_flow_pkts_tv: ca(&r.flow_pkts, &d.flow_pkts),
        ca_sess_dur_tv: ca(&r.sess_dur, &d.sess_dur),
        ref_interleaving: r.interleaving.stats(),
        dec_interleaving: d.interleaving.stats(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardMetrics {
    pub shard_id: String,
    pub ref_packets: u64,
    pub dec_packets: u64,
    pub metrics: ScalarMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub name: Schedule,
    pub version: u32,
    pub lower_edges: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metrics: ScalarMetrics,
    pub reference: TraceSummary,
    pub decoded: TraceSummary,
    pub ref_transition_probs: Vec<Vec<f64>>,
    pub dec_transition_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub schedules: Vec<ScheduleInfo>,
    pub tcp_events: Vec<String>,
    pub per_shard: Vec<ShardMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairingError {
    #[error("reference shard `{0}` has no decoded counterpart")]
    MissingDecoded(String),
    #[error("decoded shard `{0}` has no reference counterpart")]
    MissingReference(String),
}

/// Compares shard summaries paired by id. Aggregates pool the shard summaries and then apply
/// each metric's definition, so every packet, session and transition carries its own weight.
pub fn compare(
    reference: &BTreeMap<String, TraceSummary>,
    decoded: &BTreeMap<String, TraceSummary>,
) -> Result<MetricReport, PairingError> {
    let rk: BTreeSet<&String> = reference.keys().collect();
    let dk: BTreeSet<&String> = decoded.keys().collect();
    if let Some(k) = rk.difference(&dk).next() {
        return Err(PairingError::MissingDecoded((*k).clone()));
    }
    if let Some(k) = dk.difference(&rk).next() {
        return Err(PairingError::MissingReference((*k).clone()));
    }
    let mut per_shard = Vec::with_capacity(reference.len());
    let mut r_all = TraceSummary::empty();
    let mut d_all = TraceSummary::empty();
    for (id, r) in reference {
        let d = &decoded[id];
        per_shard.push(ShardMetrics {
            shard_id: id.clone(),
            ref_packets: r.records,
            dec_packets: d.records,
            metrics: scalar_metrics(r, d),
        });
        r_all.add(r);
        d_all.add(d);
    }
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        schedules: Schedule::ALL
            .iter()
            .map(|&s| ScheduleInfo {
                name: s,
                version: SCHEDULE_VERSION,
                lower_edges: s.lower_edges(),
            })
            .collect(),
        tcp_events: TcpEvent::ALL.iter().map(|e| e.name().to_string()).collect(),
        per_shard,
        aggregate: Aggregate {
            metrics: scalar_metrics(&r_all, &d_all),
            ref_transition_probs: r_all.transitions.probabilities(),
            dec_transition_probs: d_all.transitions.probabilities(),
            reference: r_all,
            decoded: d_all,
        },
    })
}

const CSV_COLUMNS: [&str; 15] = [
    "shard_id",
    "count_err",
    "proto_tv",
    "iat_tv",
    "flow_count_err",
    "flow_dur_tv",
    "tcp_event_distance_pp",
    "pkt_size_tv",
    "flow_pkts_tv",
    "transition_distance",
    "coverage",
    "ref_switch_rate",
    "dec_switch_rate",
    "ref_run_mean",
    "dec_run_mean",
];

fn csv_row(id: &str, m: &ScalarMetrics) -> String {
    let vals = [
        m.count_err,
        m.proto_tv,
        m.iat_tv,
        m.flow_count_err,
        m.flow_dur_tv,
        m.tcp_event_distance_pp,
        m.pkt_size_tv,
        m.flow_pkts_tv,
        m.transition_distance,
        m.coverage,
        m.ref_interleaving.switch_rate,
        m.dec_interleaving.switch_rate,
        m.ref_interleaving.run_mean,
        m.dec_interleaving.run_mean,
    ];
    let mut row = id.to_string();
    for v in vals {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row
}

impl MetricReport {
    /// One row per shard plus an `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for s in &self.per_shard {
            out.push_str(&csv_row(&s.shard_id, &s.metrics));
            out.push('\n');
        }
        out.push_str(&csv_row("aggregate", &self.aggregate.metrics));
        out.push('\n');
        out
    }
}
