//! Capacity of the per-sample zero-dispersion (PZD) optical fiber channel.
//!
//! The crate evaluates the conditional law of the channel as a truncated
//! Bessel series, computes mutual information of ring constellations by
//! quadrature, optimizes constellations under peak and average-cost
//! constraints, certifies the optimum through its KKT conditions, and checks
//! the analytic machinery against Monte-Carlo simulation.

pub mod bounds_audit;
pub mod channel;
pub mod constellation;
pub mod error;
pub mod infomath;
pub mod montecarlo;
pub mod optimizer;
pub mod par;
pub mod quad;
pub mod special_fn;

pub use error::{PzdError, Result};
