//! Uniform approximation of the p-th moments of all one-dimensional marginals
//! of a high-dimensional distribution, checked by simulation.
//!
//! Given i.i.d. samples `X_1, ..., X_N` of a random vector in `R^n`, the crate
//! measures
//!
//! ```text
//! sup_{|x|_2 = 1} | (1/N) sum_i |<X_i, x>|^p - E|<X, x>|^p |
//! ```
//!
//! and the machinery around it: heavy-tailed generators with moment oracles,
//! weak-l2 and l2 -> lp operator norms, the rearrangement and Gram bounds,
//! the large-coefficient diagnostics, a constructive decoupling routine with
//! certificates, and a reproducible sweep harness that searches for the
//! sample size `N(n, p, eps)`.
//!
//! Module map:
//! - [`dist`]: distributions, sampling, moment oracles, assumption checks.
//! - [`norms`]: rearrangements, weak-l2, operator norms, envelope checks.
//! - [`estimate`]: empirical moments, the sup-deviation solver, truncation,
//!   large coefficients.
//! - [`decouple`]: minimum-norm hull points and the decoupling certificate.
//! - [`harness`]: trials, success probabilities, N search, persistence.
//! - [`cli`]: the `marginals` command-line front end.

#![forbid(unsafe_code)]

pub mod cli;
pub mod decouple;
pub mod dist;
pub mod estimate;
pub mod harness;
pub mod linalg;
pub mod norms;
pub mod special;
pub mod stream;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no closed-form moment for `{0}`; use moment_mc_oracle")]
    NoClosedForm(&'static str),

    #[error("moment of order {order} is infinite for tail exponent {tail}")]
    InfiniteMoment { order: f64, tail: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no moment oracle for `{0}`; attach a Monte Carlo oracle (SampleOracle)")]
    MissingOracle(&'static str),

    #[error("Monte Carlo oracle too noisy: ci half-width {ci:.3e} exceeds budget {budget:.3e}")]
    OracleTooNoisy { ci: f64, budget: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("decoupling failed after {attempts} attempts: {summary}")]
    DecouplingFailed { attempts: usize, summary: String },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt results: {}", .0.join("; "))]
    Corrupt(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use decouple::{decouple, min_norm_hull_point, separating_direction, verify_certificate};
pub use dist::{sample_matrix, DistributionSpec, ModelParams, SampleMatrix};
pub use estimate::{deviation_sup, empirical_moment, SolverConfig};
pub use norms::{nonincreasing_rearrangement, weak_l2_norm};
pub use stream::{Purpose, StreamId};
