//! Experiment harness: configuration, quadrature references, speedup and
//! accuracy sweeps, the consistency suite and report files.

pub mod config;
pub mod consistency;
pub mod experiments;
pub mod quadrature;
pub mod report;

pub use config::{Algorithm, ObservableSpec, RunConfig, Scale, WallClockSpec};
pub use consistency::{run_consistency_suite, Check, SuiteConfig};
pub use experiments::{
    accuracy_rows, monotone_within_errors, oracle_value, run_accuracy_experiment, run_once, run_speedup_experiment,
    speedup_rows, AccuracyReport, RunOutcome, SpeedupReport, SweepPoint,
};
pub use quadrature::{basin_weights, quadrature_reference};
pub use report::{emit_checks, emit_reports, Format, ReportRow};
