//! Monte Carlo experiments: configuration, trial execution, RMSE aggregation
//! and CSV export.

mod config;
mod experiment;
mod io;

pub use config::{parse_key_values, ExperimentConfig, KeyValue};
pub use experiment::{
    compute_rmse, observation_checksum, orientation_error, run_experiment, trial_seed, ExperimentReport,
    IterationRecord, LsRecord, TrialErrors, TrialRecord,
};
pub use io::{export_report, read_observations, write_dumps, write_observations, observations_to_csv, parse_observations};
