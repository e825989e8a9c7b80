//! Tests for a structural break in high-dimensional linear regressions.
//!
//! The crate computes the Wald process W_T(ψ) over a trimmed grid of break
//! fractions, bias-corrects it with a wild bootstrap, studentizes it with a
//! long-run variance estimate, and aggregates it into exponential-family test
//! statistics whose critical values come from a simulated limit law.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bootstrap;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod hlv;
pub mod limitdist;
pub(crate) mod linalg;
pub mod mc;
pub mod rng;
pub mod stats;
pub mod teststats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/wald-process.md")]
    mod wald_process {}
    #[doc = include_str!("../../../book/src/robust-statistic.md")]
    mod robust_statistic {}
    #[doc = include_str!("../../../book/src/critical-values.md")]
    mod critical_values {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
