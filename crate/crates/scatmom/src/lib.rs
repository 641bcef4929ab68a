//! Scattering moments of time series: wavelet filter banks, scattering
//! transforms, reference processes, and moment-matching estimation.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod estimation;
pub mod numeric;
pub mod processes;
pub mod scattering;
pub mod signal;
pub mod wavelet;
