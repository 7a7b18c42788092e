//! Extremes of vector-valued Gaussian processes.
//!
//! The crate computes the quadratic-programming quantities that govern the
//! exact tail asymptotics of `P(∃t: X(t) > u b)`, the generalized Pickands and
//! Piterbarg constants, and finite-`u` exceedance probabilities by Monte
//! Carlo. See the guide in `book/` for a walkthrough.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod asymptotics;
pub mod constants;
pub mod linalg;
pub mod models;
pub mod orthant;
pub mod qp;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod tails;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/qp.md")]
    mod qp {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/simulate.md")]
    mod simulate {}
    #[doc = include_str!("../../../book/src/orthant.md")]
    mod orthant {}
    #[doc = include_str!("../../../book/src/constants.md")]
    mod constants {}
    #[doc = include_str!("../../../book/src/tails.md")]
    mod tails {}
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    mod asymptotics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
