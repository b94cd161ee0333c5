use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lift::{bucketize, BucketKind};

/// Fixed bin schedules shared by every compared trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Integer milliseconds 0..=999 plus an overflow bin for >= 1000 ms.
    IatMs,
    /// `< 1 ms`, then `[2^(k-1), 2^k)` ms for k = 1..=20, then `>= 2^20` ms.
    DurMsLog2,
    /// 64-byte bins over 0..1535 plus an overflow bin.
    PktSize,
    /// The per-flow packet-count bucket schedule of the action context.
    FlowPkts,
}

pub const SCHEDULE_VERSION: u32 = 1;

impl Schedule {
    pub const ALL: [Schedule; 4] = [
        Schedule::IatMs,
        Schedule::DurMsLog2,
        Schedule::PktSize,
        Schedule::FlowPkts,
    ];

    pub fn bins(self) -> usize {
        match self {
            Schedule::IatMs => 1001,
            Schedule::DurMsLog2 => 22,
            Schedule::PktSize => 25,
            Schedule::FlowPkts => BucketKind::PktCount.bucket_count(),
        }
    }

    /// Lower edge of each bin, in the schedule's unit (ms, ms, bytes, packets).
    pub fn lower_edges(self) -> Vec<u64> {
        match self {
            Schedule::IatMs => (0..1001).collect(),
            Schedule::DurMsLog2 => std::iter::once(0)
                .chain((0..21).map(|k| 1u64 << k))
                .collect(),
            Schedule::PktSize => (0..25).map(|i| i * 64).collect(),
            Schedule::FlowPkts => vec![0, 1, 2, 3, 4, 8, 16, 64, 256],
        }
    }

    /// Bin index for a value: microseconds for the time schedules, bytes or packets otherwise.
    pub fn bin_of(self, value: u64) -> usize {
        match self {
            Schedule::IatMs => (value / 1000).min(1000) as usize,
            Schedule::DurMsLog2 => {
                let ms = value / 1000;
                if ms == 0 {
                    0
                } else {
                    (64 - ms.leading_zeros() as usize).min(21)
                }
            }
            Schedule::PktSize => (value / 64).min(24) as usize,
            Schedule::FlowPkts => usize::from(bucketize(BucketKind::PktCount, value)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("histogram schedules differ: {0:?} vs {1:?}")]
pub struct ScheduleMismatch(pub Schedule, pub Schedule);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub schedule: Schedule,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(schedule: Schedule) -> Self {
        Self {
            schedule,
            counts: vec![0; schedule.bins()],
        }
    }

    pub fn record(&mut self, value: u64) {
        self.counts[self.schedule.bin_of(value)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<(), ScheduleMismatch> {
        if self.schedule != other.schedule {
            return Err(ScheduleMismatch(self.schedule, other.schedule));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / t as f64).collect()
    }
}

/// Half the L1 distance between two probability vectors.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total variation between normalized histograms. Two empty histograms are at distance 0,
/// an empty one against a nonempty one at distance 1.
pub fn tv_distance(h1: &Histogram, h2: &Histogram) -> Result<f64, ScheduleMismatch> {
    if h1.schedule != h2.schedule {
        return Err(ScheduleMismatch(h1.schedule, h2.schedule));
    }
    Ok(match (h1.total(), h2.total()) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => tv(&h1.normalized(), &h2.normalized()),
    })
}

/// `½(Σ|c·ĥ − h| + (1 − c))`: the decoded distribution is scaled by valid-packet coverage and
/// the missing mass is charged in full.
pub fn coverage_adjusted_tv(
    h_ref: &Histogram,
    h_dec: &Histogram,
    coverage: f64,
) -> Result<f64, ScheduleMismatch> {
    if h_ref.schedule != h_dec.schedule {
        return Err(ScheduleMismatch(h_ref.schedule, h_dec.schedule));
    }
    let c = coverage.clamp(0.0, 1.0);
    let (r, d) = (h_ref.normalized(), h_dec.normalized());
    let l1: f64 = r.iter().zip(&d).map(|(h, hh)| (c * hh - h).abs()).sum();
    Ok(0.5 * (l1 + (1.0 - c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_bins_match_edges() {
        for s in Schedule::ALL {
            let edges = s.lower_edges();
            assert_eq!(edges.len(), s.bins());
            assert!(edges.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn duration_bins() {
        let s = Schedule::DurMsLog2;
        assert_eq!(s.bin_of(999), 0);
        assert_eq!(s.bin_of(1_000), 1);
        assert_eq!(s.bin_of(1_999), 1);
        assert_eq!(s.bin_of(2_000), 2);
        assert_eq!(s.bin_of((1 << 20) * 1000 - 1), 20);
        assert_eq!(s.bin_of((1 << 20) * 1000), 21);
        assert_eq!(s.bin_of(u64::MAX), 21);
    }

    #[test]
    fn iat_and_size_overflow() {
        assert_eq!(Schedule::IatMs.bin_of(999_999), 999);
        assert_eq!(Schedule::IatMs.bin_of(1_000_000), 1000);
        assert_eq!(Schedule::PktSize.bin_of(1535), 23);
        assert_eq!(Schedule::PktSize.bin_of(1536), 24);
    }

    #[test]
    fn tv_examples() {
        let mut a = Histogram::new(Schedule::FlowPkts);
        let mut b = Histogram::new(Schedule::FlowPkts);
        a.record(1);
        a.record(2);
        b.record(1);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &b).unwrap(), 0.5);
        assert_eq!(
            tv_distance(&a, &Histogram::new(Schedule::FlowPkts)).unwrap(),
            1.0
        );
        assert!(tv_distance(&a, &Histogram::new(Schedule::PktSize)).is_err());
    }

    #[test]
    fn coverage_adjusted_examples() {
        let mut h = Histogram::new(Schedule::PktSize);
        h.record(100);
        h.record(900);
        assert_eq!(coverage_adjusted_tv(&h, &h, 1.0).unwrap(), 0.0);
        assert_eq!(coverage_adjusted_tv(&h, &h, 0.0).unwrap(), 1.0);
        assert_eq!(coverage_adjusted_tv(&h, &h, 0.5).unwrap(), 0.5);
    }
}
