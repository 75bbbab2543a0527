//! Prior-free revenue maximization in downward-closed permutation
//! environments via cross-checked consensus estimates and profit extraction.
//!
//! Module map:
//! - [`envir`]: feasibility environments and the tie-uniform weight maximizer.
//! - [`revcurve`]: revenue curves, virtual values, envy-free benchmarks and
//!   payment-identity integration.
//! - [`consensus`]: consensus rounding, count statistics, estimated revenue
//!   curves and the cross-checked estimator.
//! - [`profitextract`]: the profit extractor parameterized by a target profile.
//! - [`mechanisms`]: Pseudo-Vickrey, the cross-checked composition and their
//!   convex combination, with exact and Monte-Carlo revenue evaluation.
//! - [`harness`]: instance generators, experiments, verification suites and
//!   CSV emission used by the `ccepe` CLI.

pub mod consensus;
pub mod envir;
mod error;
pub mod harness;

pub mod mechanisms;
pub mod par;
pub mod profitextract;
pub mod revcurve;
pub mod seeds;

pub use consensus::{ConsensusParams, EstimatedProfile, SharedRandomness};
pub use envir::{Environment, EnvironmentKind, SetSystemRealization, Support, WeightVector};
pub use error::{Error, Result};
pub use mechanisms::{MechanismKind, MechanismResult};
pub use revcurve::{Allocation, Outcome, RevenueCurve, ValuationProfile};

/// How expectations over environment randomness are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Enumerate every realization, permutation and tie.
    Exact,
    /// Average over `trials` sampled draws seeded from `seed`.
    MonteCarlo { trials: usize, seed: u64 },
}
