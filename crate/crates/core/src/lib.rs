//! Homogenized coefficients of the random conductance model on the lattice
//! torus, approximated through the modified corrector `phi_T`.
//!
//! The guide in `book/` walks through the concepts with runnable examples.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod corrector;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod field_io;
pub mod fit;
pub mod green;
pub mod lattice;
pub mod probability;
pub(crate) mod reduce;
pub mod solver;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/corrector.md")]
    mod corrector {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/green.md")]
    mod green {}
    #[doc = include_str!("../../../book/src/probability.md")]
    mod probability {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
