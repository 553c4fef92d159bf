//! Experiment layer behind the `selfdistill` binary: configuration, the sine
//! dataset, runners that write CSV tables, SVG plots rendered from those
//! tables, and the random-instance self check.

pub mod config;
pub mod data;
pub mod plot;
pub mod run;
pub mod selfcheck;

pub use config::{DataSource, ExperimentConfig, Grid, RawConfig};
pub use data::{format_float, generate_sine, read_dataset, write_dataset};
pub use run::{
    compute_constrained, compute_experiment, run_constrained, run_experiment, run_sweep, spectral_report, ChainResult,
    ConstrainedReport, ConstrainedRow, ExperimentRun, SweepRow,
};
