//! The per-packet action record, its digit and bucket encodings, and the JSON Lines format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{IpFamily, Proto, TcpOptProfile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowEvt {
    Open,
    Continue,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dir {
    AToB,
    BToA,
}

impl Dir {
    pub fn index(self) -> usize {
        match self {
            Dir::AToB => 0,
            Dir::BToA => 1,
        }
    }

    pub fn peer(self) -> Dir {
        match self {
            Dir::AToB => Dir::BToA,
            Dir::BToA => Dir::AToB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastDir {
    None,
    AToB,
    BToA,
}

impl From<Dir> for LastDir {
    fn from(d: Dir) -> Self {
        match d {
            Dir::AToB => LastDir::AToB,
            Dir::BToA => LastDir::BToA,
        }
    }
}

/// Coarse TCP control event. `None` for non-TCP packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcpCtrl {
    None,
    Syn,
    Synack,
    Fin,
    Rst,
    Data,
    Ack,
}

impl TcpCtrl {
    /// The six labels a TCP packet can carry, in transition-matrix order.
    pub const LABELS: [TcpCtrl; 6] = [
        TcpCtrl::Syn,
        TcpCtrl::Synack,
        TcpCtrl::Fin,
        TcpCtrl::Rst,
        TcpCtrl::Data,
        TcpCtrl::Ack,
    ];

    /// Position in [`TcpCtrl::LABELS`].
    pub fn label_index(self) -> Option<usize> {
        Self::LABELS.iter().position(|&l| l == self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqSign {
    Nonneg,
    Neg,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("value {value} does not fit in {n_digits} base-16 digits")]
pub struct DigitRangeError {
    pub value: u64,
    pub n_digits: usize,
}

/// Base-16, most significant digit first.
pub fn encode_digits(value: u64, n_digits: usize) -> Result<Vec<u8>, DigitRangeError> {
    if n_digits < 16 && value >> (4 * n_digits) != 0 {
        return Err(DigitRangeError { value, n_digits });
    }
    Ok((0..n_digits)
        .rev()
        .map(|i| ((value >> (4 * i)) & 0xF) as u8)
        .collect())
}

pub fn decode_digits(digits: &[u8]) -> u64 {
    digits
        .iter()
        .fold(0u64, |acc, &d| (acc << 4) | u64::from(d & 0xF))
}

pub fn digits4(value: u16) -> [u8; 4] {
    let mut out = [0u8; 4];
    for (i, d) in out.iter_mut().enumerate() {
        *d = ((value >> (4 * (3 - i))) & 0xF) as u8;
    }
    out
}

pub fn digits8(value: u32) -> [u8; 8] {
    let mut out = [0u8; 8];
    for (i, d) in out.iter_mut().enumerate() {
        *d = ((value >> (4 * (7 - i))) & 0xF) as u8;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BucketKind {
    Gap,
    PktCount,
    Payload,
    AckStreak,
}

/// Lower edges, microseconds.
const GAP_EDGES: [u64; 16] = [
    0,
    1,
    10,
    100,
    1_000,
    10_000,
    100_000,
    1_000_000,
    10_000_000,
    60_000_000,
    120_000_000,
    240_000_000,
    480_000_000,
    960_000_000,
    1_920_000_000,
    3_840_000_000,
];
const COUNT_EDGES: [u64; 9] = [0, 1, 2, 3, 4, 8, 16, 64, 256];
const PAYLOAD_EDGES: [u64; 8] = [0, 1, 64, 256, 512, 1024, 1460, 1461];

impl BucketKind {
    fn edges(self) -> &'static [u64] {
        match self {
            BucketKind::Gap => &GAP_EDGES,
            BucketKind::PktCount | BucketKind::AckStreak => &COUNT_EDGES,
            BucketKind::Payload => &PAYLOAD_EDGES,
        }
    }

    pub fn bucket_count(self) -> usize {
        self.edges().len()
    }
}

/// Index of the bucket containing `value`; buckets are `[edge_i, edge_{i+1})`, last one open.
pub fn bucketize(kind: BucketKind, value: u64) -> u8 {
    let edges = kind.edges();
    (edges.partition_point(|&e| e <= value) - 1) as u8
}

/// TTL residual against the initial-TTL classes {32, 64, 128, 255}.
pub fn ttl_residual(ttl: u8) -> u8 {
    const CLASSES: [u8; 4] = [32, 64, 128, 255];
    let idx = CLASSES.iter().position(|&c| c >= ttl).unwrap_or(3);
    let r = (CLASSES[idx] - ttl).min(31);
    idx as u8 * 32 + r
}

pub fn ttl_from_residual(res: u8) -> u8 {
    const CLASSES: [u8; 4] = [32, 64, 128, 255];
    let class = CLASSES[usize::from(res / 32).min(3)];
    class - (res % 32)
}

/// One packet action: behavioral choices plus runtime context and trace-order timing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub flow_token: u32,
    pub generation: u32,
    pub flow_evt: FlowEvt,
    pub proto: Proto,
    pub ip_family: IpFamily,
    pub dir: Dir,
    pub tcp_ctrl: TcpCtrl,
    pub tcp_opt_profile: TcpOptProfile,
    pub tcp_win_d: [u8; 4],
    pub tcp_ack_adv_d: [u8; 8],
    pub tcp_ack_unseen: bool,
    pub tcp_seq_delta_sign: SeqSign,
    pub tcp_seq_delta_d: [u8; 8],
    pub ttl_res: u8,
    pub icmp_type: u8,
    pub icmp_code: u8,
    pub l4_payload_len_d: [u8; 4],
    pub ctx_gap_b: u8,
    pub ctx_pkt_count_b: u8,
    pub ctx_last_payload_b: u8,
    pub ctx_ack_streak_b: u8,
    pub ctx_last_dir: LastDir,
    pub delta_t_us: u64,
}

impl ActionRecord {
    pub fn window(&self) -> u16 {
        decode_digits(&self.tcp_win_d) as u16
    }

    pub fn payload_len(&self) -> u16 {
        decode_digits(&self.l4_payload_len_d) as u16
    }

    pub fn ack_advance(&self) -> u32 {
        decode_digits(&self.tcp_ack_adv_d) as u32
    }

    /// Signed sequence delta. Magnitudes above 2^31 saturate the sign range.
    pub fn seq_delta(&self) -> i64 {
        let m = decode_digits(&self.tcp_seq_delta_d) as i64;
        match self.tcp_seq_delta_sign {
            SeqSign::Nonneg => m,
            SeqSign::Neg => -m,
        }
    }

    /// Checks digit and bucket ranges, returning the first offending field name.
    pub fn check_ranges(&self, slots: Option<u32>) -> Result<(), &'static str> {
        let digit_fields: [(&'static str, &[u8]); 4] = [
            ("tcp_win_d", &self.tcp_win_d),
            ("tcp_ack_adv_d", &self.tcp_ack_adv_d),
            ("tcp_seq_delta_d", &self.tcp_seq_delta_d),
            ("l4_payload_len_d", &self.l4_payload_len_d),
        ];
        for (name, digits) in digit_fields {
            if digits.iter().any(|&d| d >= 16) {
                return Err(name);
            }
        }
        if self.ttl_res >= 128 {
            return Err("ttl_res");
        }
        let buckets = [
            ("ctx_gap_b", self.ctx_gap_b, BucketKind::Gap),
            (
                "ctx_pkt_count_b",
                self.ctx_pkt_count_b,
                BucketKind::PktCount,
            ),
            (
                "ctx_last_payload_b",
                self.ctx_last_payload_b,
                BucketKind::Payload,
            ),
            (
                "ctx_ack_streak_b",
                self.ctx_ack_streak_b,
                BucketKind::AckStreak,
            ),
        ];
        for (name, b, kind) in buckets {
            if usize::from(b) >= kind.bucket_count() {
                return Err(name);
            }
        }
        if slots.is_some_and(|v| self.flow_token >= v) || self.flow_token > u32::from(u16::MAX) {
            return Err("flow_token");
        }
        Ok(())
    }
}

/// First line of an action file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHeader {
    pub schema_version: u32,
    #[serde(rename = "V")]
    pub slots: u32,
    pub config_hash: String,
    /// Timestamp of the first lifted packet; the compiler's default epoch.
    pub epoch_us: u64,
}

#[derive(Debug, Error)]
pub enum ActionIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}` {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("unsupported action schema version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_actions<W: Write>(
    mut out: W,
    header: Option<&ActionHeader>,
    actions: &[ActionRecord],
) -> Result<(), ActionIoError> {
    if let Some(h) = header {
        serde_json::to_writer(&mut out, h).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    for a in actions {
        serde_json::to_writer(&mut out, a).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Extracts the field name from serde's "missing field `x`" / "unknown field `x`" messages.
fn field_in_message(msg: &str) -> Option<String> {
    if !(msg.starts_with("missing field") || msg.starts_with("unknown field")) {
        return None;
    }
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

pub fn read_actions<R: BufRead>(
    input: R,
) -> Result<(Option<ActionHeader>, Vec<ActionRecord>), ActionIoError> {
    let mut header = None;
    let mut actions = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| ActionIoError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if actions.is_empty() && header.is_none() && value.get("schema_version").is_some() {
            let h: ActionHeader =
                serde_json::from_value(value).map_err(|e| ActionIoError::Parse {
                    line: line_no,
                    message: format!("bad header: {e}"),
                })?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(ActionIoError::Version(h.schema_version));
            }
            header = Some(h);
            continue;
        }
        let rec: ActionRecord = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            match field_in_message(&msg) {
                Some(field) => ActionIoError::Schema {
                    line: line_no,
                    field,
                    message: msg.clone(),
                },
                None => ActionIoError::Parse {
                    line: line_no,
                    message: msg,
                },
            }
        })?;
        rec.check_ranges(header.as_ref().map(|h| h.slots))
            .map_err(|field| ActionIoError::Schema {
                line: line_no,
                field: field.to_string(),
                message: "out of range".to_string(),
            })?;
        actions.push(rec);
    }
    Ok((header, actions))
}
