//! Session-preserving temporal sharding and contiguous split assignment.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{sessionize, Sessionization};
use crate::packet::CanonicalPacket;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardDescriptor {
    pub shard_id: usize,
    pub file: String,
    pub session_ids: Vec<usize>,
    pub start_ts_us: u64,
    pub packets: u64,
    /// A single session larger than the budget.
    pub oversized: bool,
    /// Input packet indices in time order.
    #[serde(skip)]
    pub packet_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Shards moved out of train to fill an otherwise empty split.
    pub adjustments: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub budget: u64,
    pub shards: Vec<ShardDescriptor>,
    pub splits: Option<SplitRanges>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ShardError {
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("split fractions must be nonnegative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
}

pub fn shard_file_name(id: usize) -> String {
    format!("shard_{id:06}.pcap")
}

/// Greedily packs whole sessions, in start order, into shards of at most `budget` packets.
pub fn plan_shards(packets: &[CanonicalPacket], budget: u64) -> Result<ShardPlan, ShardError> {
    if budget == 0 {
        return Err(ShardError::ZeroBudget);
    }
    let sz = sessionize(packets);
    Ok(plan_from_sessions(&sz, budget))
}

pub fn plan_from_sessions(sz: &Sessionization, budget: u64) -> ShardPlan {
    let mut shard_of_session = vec![0usize; sz.sessions.len()];
    let mut shards: Vec<ShardDescriptor> = Vec::new();
    let mut warnings = Vec::new();
    for (sid, s) in sz.sessions.iter().enumerate() {
        let fits = shards
            .last()
            .is_some_and(|cur| cur.packets + s.packets <= budget || cur.packets == 0);
        if !fits {
            let id = shards.len();
            shards.push(ShardDescriptor {
                shard_id: id,
                file: shard_file_name(id),
                session_ids: Vec::new(),
                start_ts_us: s.start_ts_us,
                packets: 0,
                oversized: false,
                packet_indices: Vec::new(),
            });
        }
        let cur = shards.last_mut().expect("a shard is open");
        cur.session_ids.push(sid);
        cur.packets += s.packets;
        if s.packets > budget {
            cur.oversized = true;
            warnings.push(format!(
                "session {sid} ({s}) has {} packets, over the budget of {budget}; kept whole in shard {}",
                s.packets, cur.shard_id
            ));
        }
        shard_of_session[sid] = cur.shard_id;
    }
    for (i, &label) in sz.labels.iter().enumerate() {
        shards[shard_of_session[label]].packet_indices.push(i);
    }
    ShardPlan {
        budget,
        shards,
        splits: None,
        warnings,
    }
}

/// Contiguous train/val/test ranges over `n` ordered shards. Val and test get
/// `floor(n * fraction)` shards, train the remainder; with `n >= 3` an empty split takes one
/// shard from train.
pub fn assign_splits(n: usize, fractions: [f64; 3]) -> Result<SplitRanges, ShardError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-6 {
        return Err(ShardError::BadFractions(fractions));
    }
    let count = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let mut val = count(fractions[1]).min(n);
    let mut test = count(fractions[2]).min(n - val);
    let mut train = n - val - test;
    let mut adjustments = 0;
    if n >= 3 {
        for split in [&mut val, &mut test] {
            if *split == 0 && train > 1 {
                *split += 1;
                train -= 1;
                adjustments += 1;
            }
        }
        if train == 0 {
            let donor = if val >= test { &mut val } else { &mut test };
            *donor -= 1;
            train += 1;
            adjustments += 1;
        }
    }
    Ok(SplitRanges {
        train: 0..train,
        val: train..train + val,
        test: train + val..n,
        adjustments,
    })
}

type SessionSig = (crate::flow::FlowKey, u64, u64, u64);

fn signatures(packets: &[CanonicalPacket]) -> BTreeMap<SessionSig, usize> {
    let mut out = BTreeMap::new();
    for s in sessionize(packets).sessions {
        *out.entry((s.key, s.start_ts_us, s.end_ts_us, s.packets))
            .or_insert(0) += 1;
    }
    out
}

/// Re-sessionizes each shard and checks the union equals the original session set.
pub fn verify_roundtrip(
    original: &[CanonicalPacket],
    shards: &[Vec<CanonicalPacket>],
) -> Result<(), String> {
    let mut union: BTreeMap<SessionSig, usize> = BTreeMap::new();
    let mut total = 0;
    for (i, shard) in shards.iter().enumerate() {
        if shard.windows(2).any(|w| w[1].ts_us < w[0].ts_us) {
            return Err(format!("shard {i} is not time-ordered"));
        }
        total += shard.len();
        for (k, v) in signatures(shard) {
            *union.entry(k).or_insert(0) += v;
        }
    }
    if total != original.len() {
        return Err(format!(
            "shards hold {total} packets, input has {}",
            original.len()
        ));
    }
    let expected = signatures(original);
    if union != expected {
        let missing = expected.keys().filter(|k| !union.contains_key(*k)).count();
        let extra = union.keys().filter(|k| !expected.contains_key(*k)).count();
        return Err(format!(
            "session sets differ: {missing} missing, {extra} unexpected"
        ));
    }
    Ok(())
}
