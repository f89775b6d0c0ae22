//! Numerical laboratory for doubly nonlocal Fisher-KPP equations with
//! time-periodic coefficients.

// `!(x > 0.0)` is used on purpose so that NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod dynamics;
pub mod grid;
pub mod harness;
pub mod kernel;
pub mod nonlocal_ops;
pub mod output;
pub mod periodic;
pub mod persistence;
pub mod reduce;
