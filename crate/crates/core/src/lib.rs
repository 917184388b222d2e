//! Bayesian clustering of binary longitudinal series through pattern
//! probabilities of per-subject dynamic probit state-space models.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod clustering;
pub mod config;
pub mod error;
pub mod events;
pub mod io;
pub mod linalg;
pub mod model;
pub mod particle_filter;
pub mod reports;
pub mod run;
pub mod sampler;
pub mod simulate;
pub mod special;
pub mod stochastics;

pub use error::{Error, Result};
