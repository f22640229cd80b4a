//! Driver for `pfsi-core`: runs, parameter sweeps, post-processing and the on-disk
//! formats they share.

pub mod diagnose;
pub mod error;
pub mod run;
pub mod snapshot;
pub mod sweep;
pub mod tables;

pub use diagnose::{cmd_diagnose, Check, CheckOutcome, DiagnoseOptions};
pub use error::CliError;
pub use run::{cmd_run, load_config_file, RunManifest, RunOptions, Termination};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotError};
pub use sweep::{cmd_sweep, load_plan, SweepPlan, SweepSummary};
