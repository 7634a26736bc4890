//! Convergence-rate studies: a TOML config, a replicated run over a
//! sample-size ladder, and log-log slope fits of the resulting errors.

mod config;
mod slope;
mod study;

pub use config::{FamilyName, StudyConfig};
pub use slope::{fit_loglog_slope, Slope};
pub use study::{
    run_study, DerivError, MetricSlope, RateStudyResult, ReplicationRecord, MAX_FAILURE_RATE, SCHEMA_VERSION,
};
