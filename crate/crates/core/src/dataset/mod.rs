//! Offline trajectory data: behavior-policy collection, return labels,
//! sliding windows, normalization statistics and on-disk storage.

mod io;
mod records;
mod windows;

pub use io::{read_records, read_windows, write_records, write_windows, DatasetHeader};
pub use records::{
    collect, rollout, run_behavior_policy, BehaviorPolicy, RecordStream, Rollout, TransitionRecord,
};
pub use windows::{compute_return, slice_windows, DatasetStats, TrajectoryWindow, STD_FLOOR};
