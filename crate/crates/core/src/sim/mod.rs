//! Scenario files, the seeded Monte-Carlo runner, channel inspection and the
//! built-in invariant suite.

pub mod config;
pub mod inspect;
pub mod runner;
pub mod selftest;

pub use config::{ChannelSpec, Direction, EqualizerKind, PowerAllocation, Scenario, SpreaderKind};
pub use inspect::{inspect_channel, ChannelReport};
pub use runner::{papr_samples, run, run_with_workers, sweep_with_workers, to_csv, write_csv};
pub use selftest::{selftest, Fault, Report};
