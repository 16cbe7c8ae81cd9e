//! Charge-trap flash programming under fragmented pulse trains.
//!
//! Simulates how blocking-oxide trap dynamics turn a fixed total ON time into
//! a pulse-count and gap dependent threshold shift, extracts the trapping and
//! de-trapping timescales from simulated or measured curves, calibrates the
//! model to reference anchors, and quantifies stochastic weight-update errors.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod device;
pub mod error;
pub mod extraction;
pub mod protocol;
pub mod rpu;

pub use error::{Error, Result};
