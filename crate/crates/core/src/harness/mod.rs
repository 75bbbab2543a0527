//! Experiment plumbing behind the `ccepe` binary: instance generators,
//! experiment runs, verification suites, curve dumps and ratio sweeps.

pub mod checks;
pub mod curve;
pub mod experiment;
pub mod instances;
pub mod ratio;
pub mod verify;

pub use curve::{emit_curve, emit_curve_file, parse_profile, read_profile};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentSummary, ResultRow};
pub use instances::{generate_instance, EnvironmentSpec, InstanceSpec, ValueFamily};
pub use ratio::{run_sweep, RatioReport, RatioSweep};
pub use verify::{run_suite, verify_suite, Mutation, Suite, SuiteReport, VerifyOptions};
