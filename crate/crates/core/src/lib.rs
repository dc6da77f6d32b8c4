//! Common-information planning for finite-horizon Dec-POMDPs.
//!
//! A fictitious coordinator that sees only common information picks a
//! *prescription* (a per-agent map from private history to action) at every
//! step. This crate builds the coordinator's tree of full common states,
//! solves it exactly, solves compressed variants over approximate private and
//! common states, measures the compression errors, and checks observed value
//! gaps against their closed-form bounds.

pub mod approx_dp;
pub mod belief;
pub mod compression;
pub mod error;
pub mod exact_dp;
pub mod generate;
pub mod histories;
pub mod model;
pub mod verify;

pub use error::{Error, Result};

/// Probability at or below which a history or branch is treated as unreachable.
pub const ADMISSIBLE: f64 = 1e-12;
/// Tolerance for exact equalities (sums to one, value agreement, zero errors).
pub const EQ_TOL: f64 = 1e-9;
/// Tolerance for conclusions derived from premises that held at `EQ_TOL`.
pub const IMPLIED_TOL: f64 = 1e-6;
/// Default cap on (common state × prescription) evaluations.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// A cap on the number of (common state × prescription) evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(pub u64);

impl Default for Budget {
    fn default() -> Self {
        Budget(DEFAULT_BUDGET)
    }
}

impl Budget {
    pub fn check(&self, locus: impl FnOnce() -> String, needed: u128) -> Result<()> {
        if needed > self.0 as u128 {
            return Err(Error::Budget {
                locus: locus(),
                needed,
                cap: self.0,
            });
        }
        Ok(())
    }
}
