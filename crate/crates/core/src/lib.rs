//! Gaussian-mixture Taylor estimators for risk measures of scalar quantities
//! of interest under Gaussian random-field inputs.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command
//! line front end and thread pools live in the `gmtaylor` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod banded;
pub mod error;
pub mod math;
pub mod measure;
pub mod mixture;
pub mod model;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod split1d;
pub mod taylor;

pub use error::{Error, Result};
