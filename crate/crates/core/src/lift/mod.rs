//! Packet stream → action sequence.

mod action;
mod lifter;
mod slots;

pub use action::{
    bucketize, decode_digits, digits4, digits8, encode_digits, read_actions, ttl_from_residual,
    ttl_residual, write_actions, ActionHeader, ActionIoError, ActionRecord, BucketKind,
    DigitRangeError, Dir, FlowEvt, LastDir, SeqSign, TcpCtrl, SCHEMA_VERSION,
};
pub use lifter::{
    classify_tcp_ctrl, lift_trace, LiftConfig, LiftError, LiftOutput, LiftReport, Lifter,
    DEFAULT_SLOTS, MAX_SLOTS,
};
pub use slots::{Binding, SlotAllocator};
