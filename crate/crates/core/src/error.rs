use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PzdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("series truncation failed: best certified tail {best_bound:e} at M = {truncation_m} (requested {requested:e})")]
    Truncation {
        best_bound: f64,
        truncation_m: usize,
        requested: f64,
    },

    #[error("negative density {value:e} exceeds certified tail {tail_bound:e}; truncation order is too small")]
    NegativeDensity { value: f64, tail_bound: f64 },

    #[error("point (r = {r}, r0 = {r0}) lies outside the expansion envelope (r <= {r_max}, r0 <= {r0_max})")]
    Envelope {
        r: f64,
        r0: f64,
        r_max: f64,
        r0_max: f64,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("histogram cell has expected count {expected:.3} < 5; try at most {suggested_r_bins} x {suggested_phi_bins} bins")]
    Binning {
        expected: f64,
        suggested_r_bins: usize,
        suggested_phi_bins: usize,
    },

    #[error("{discarded} of {total} Monte-Carlo samples left the expansion envelope")]
    TooManyDiscards { discarded: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, PzdError>;
