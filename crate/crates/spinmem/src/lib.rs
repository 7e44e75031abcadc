//! Spin-ensemble microwave memory simulator.
//!
//! NV-center transition frequencies, inhomogeneous frequency and coupling
//! distributions, Holstein-Primakoff linear response, mean-value
//! cavity/spin dynamics and two-pulse-echo analysis.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod config;
pub mod coupling;
pub mod density;
pub mod drive;
pub mod dynamics;
pub mod echo;
pub mod error;
pub mod fit;
pub mod grid;
pub mod linear;
pub mod par;
pub mod params;
pub mod presets;
pub mod quad;
pub mod spectrum;
pub mod units;

pub use error::{Error, Result};
