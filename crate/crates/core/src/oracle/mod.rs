//! Reference checkers for relaxed priority queue histories and a
//! deterministic driver producing such histories from the real queue.

pub mod check;
pub mod driver;
pub mod exact;
pub mod trace;

pub use check::{check, check_structural, check_temporal, rank_of, LiveMultiset, Mode, Verdict, Violation};
pub use driver::{drive_schedule, explore, DriverError, Fallback, Run, Schedule, ScriptOp, Setup};
pub use exact::ExactQueue;
pub use trace::{OpKind, Record, Trace, TraceError};
