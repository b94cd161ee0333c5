//! Decoded-trace fidelity metrics: sessionization, TCP diagnostics, histogram distances,
//! transition structure and multi-flow interleaving.

mod diag;
mod hist;
mod report;
mod session;
mod structure;

pub use diag::{
    tcp_diagnostics, tcp_event_distance_pp, TcpEvent, TcpEventCounts, FAST_RETRANS_DUPACKS,
    REORDER_WINDOW,
};
pub use hist::{
    coverage_adjusted_tv, tv, tv_distance, Histogram, Schedule, ScheduleMismatch, SCHEDULE_VERSION,
};
pub use report::{
    compare, scalar_metrics, Aggregate, MetricReport, PairingError, ScalarMetrics, ScheduleInfo,
    ShardMetrics, TraceSummary, REPORT_SCHEMA_VERSION,
};
pub use session::{sessionize, CloseReason, SessionRecord, Sessionization};
pub use structure::{
    interleaving_stats, nearest_rank, transition_distance, Interleaving, InterleavingStats,
    TransitionMatrix,
};
