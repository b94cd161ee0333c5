use serde::{Deserialize, Serialize};

use super::hist::tv;
use super::session::Sessionization;
use crate::lift::{classify_tcp_ctrl, TcpCtrl};
use crate::packet::CanonicalPacket;

const N_LABELS: usize = TcpCtrl::LABELS.len();

/// Transition counts between consecutive TCP control labels within sessions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; N_LABELS]; N_LABELS],
}

impl TransitionMatrix {
    pub fn from_trace(packets: &[CanonicalPacket], sessions: &Sessionization) -> Self {
        let mut m = Self::default();
        let mut prev: Vec<Option<usize>> = vec![None; sessions.sessions.len()];
        for (i, pkt) in packets.iter().enumerate() {
            let Some(t) = pkt.tcp() else { continue };
            let label = classify_tcp_ctrl(t.flags, pkt.payload_len)
                .label_index()
                .expect("tcp packets carry a label");
            let slot = &mut prev[sessions.labels[i]];
            if let Some(p) = *slot {
                m.counts[p][label] += 1;
            }
            *slot = Some(label);
        }
        m
    }

    pub fn add(&mut self, other: &TransitionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn row_mass(&self) -> [u64; N_LABELS] {
        self.counts.map(|r| r.iter().sum())
    }

    /// Row-stochastic form; empty rows stay zero.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let m: u64 = r.iter().sum();
                r.iter()
                    .map(|&c| if m == 0 { 0.0 } else { c as f64 / m as f64 })
                    .collect()
            })
            .collect()
    }
}

/// `Σ_r w_r · TV(row_r(dec), row_r(ref))`, weights from reference row mass. A row with
/// reference mass but none in the decode costs 1. With no reference transitions at all the
/// distance is 0 if the decode has none either, else 1.
pub fn transition_distance(reference: &TransitionMatrix, decoded: &TransitionMatrix) -> f64 {
    let rm = reference.row_mass();
    let dm = decoded.row_mass();
    let total: u64 = rm.iter().sum();
    if total == 0 {
        return if dm.iter().sum::<u64>() == 0 {
            0.0
        } else {
            1.0
        };
    }
    let (rp, dp) = (reference.probabilities(), decoded.probabilities());
    (0..N_LABELS)
        .filter(|&r| rm[r] > 0)
        .map(|r| {
            let w = rm[r] as f64 / total as f64;
            let d = if dm[r] == 0 { 1.0 } else { tv(&dp[r], &rp[r]) };
            w * d
        })
        .sum()
}

/// Adjacent-packet session switching and same-session run lengths.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interleaving {
    pub switches: u64,
    pub adjacent_pairs: u64,
    pub runs: Vec<u64>,
    pub session_count: u64,
}

impl Interleaving {
    pub fn from_labels(labels: &[usize], session_count: usize) -> Self {
        let mut runs = Vec::new();
        let mut switches = 0;
        let mut run = 0u64;
        for (i, l) in labels.iter().enumerate() {
            if i > 0 && labels[i - 1] != *l {
                switches += 1;
                runs.push(run);
                run = 0;
            }
            run += 1;
        }
        if run > 0 {
            runs.push(run);
        }
        Self {
            switches,
            adjacent_pairs: labels.len().saturating_sub(1) as u64,
            runs,
            session_count: session_count as u64,
        }
    }

    /// Pools shards: counts add, run lists concatenate.
    pub fn add(&mut self, other: &Interleaving) {
        self.switches += other.switches;
        self.adjacent_pairs += other.adjacent_pairs;
        self.runs.extend_from_slice(&other.runs);
        self.session_count += other.session_count;
    }

    pub fn stats(&self) -> InterleavingStats {
        let mut sorted = self.runs.clone();
        sorted.sort_unstable();
        let total: u64 = sorted.iter().sum();
        InterleavingStats {
            switch_rate: if self.adjacent_pairs == 0 {
                0.0
            } else {
                self.switches as f64 / self.adjacent_pairs as f64
            },
            run_mean: if sorted.is_empty() {
                0.0
            } else {
                total as f64 / sorted.len() as f64
            },
            run_p90: nearest_rank(&sorted, 90.0),
            run_p99: nearest_rank(&sorted, 99.0),
            session_count: self.session_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterleavingStats {
    pub switch_rate: f64,
    pub run_mean: f64,
    pub run_p90: u64,
    pub run_p99: u64,
    pub session_count: u64,
}

/// Nearest-rank percentile of sorted values; 0 for an empty list.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn interleaving_stats(sessions: &Sessionization) -> InterleavingStats {
    Interleaving::from_labels(&sessions.labels, sessions.sessions.len()).stats()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aaba() {
        let s = Interleaving::from_labels(&[0, 0, 1, 0], 2).stats();
        assert_eq!(s.switch_rate, 2.0 / 3.0);
        assert_eq!(s.run_mean, 4.0 / 3.0);
        assert_eq!((s.run_p90, s.run_p99), (2, 2));
    }

    #[test]
    fn single_session() {
        let s = Interleaving::from_labels(&[4; 7], 1).stats();
        assert_eq!(s.switch_rate, 0.0);
        assert_eq!(s.run_mean, 7.0);
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(nearest_rank(&v, 90.0), 9);
        assert_eq!(nearest_rank(&v, 99.0), 10);
        assert_eq!(nearest_rank(&v, 50.0), 5);
    }

    #[test]
    fn missing_row_costs_one() {
        let mut r = TransitionMatrix::default();
        r.counts[0][1] = 1;
        r.counts[5][4] = 3;
        let mut d = TransitionMatrix::default();
        d.counts[5][4] = 1;
        assert_eq!(transition_distance(&r, &r), 0.0);
        assert_eq!(transition_distance(&r, &d), 0.25);
    }
}
