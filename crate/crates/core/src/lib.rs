// `!(x > y)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod field;
pub mod geometry;
pub mod output;
pub mod potentials;
pub mod propagators;
pub mod quadrature;
pub mod snapshot;
pub mod spectral;
pub mod states;
pub mod validation;

pub use error::{Error, Result};
