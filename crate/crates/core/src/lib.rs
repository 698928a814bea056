//! Event-based neural spike detection for delta-modulating neural frontends.
//!
//! The crate is `no_std` (with `alloc`) and holds the pure algorithmic core:
//!
//! - [`dataset`]: synthetic recordings with ground truth, zero-phase band-pass
//!   filtering, SNR estimation.
//! - [`encoder`]: delta modulation into address-event (AER) streams and
//!   stair-step reconstruction.
//! - [`evspd`]: the dual-threshold event-based spike detector (binned event
//!   counts, binarization, moving sum, refractory).
//! - [`hram`]: behavioral model of the eDRAM/SRAM hybrid in-memory detector
//!   macro, with mismatch, latch flips and bias calibration.
//! - [`baselines`]: sample-domain NEO, ED-LPF and absolute-threshold detectors.
//! - [`eval`]: spike matching, detection metrics and firing patterns.
//!
//! File formats, the experiment runner and the command line tool live in the
//! companion `evspike` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

extern crate alloc;

pub mod baselines;
pub mod dataset;
pub mod encoder;
mod error;
pub mod eval;
pub mod evspd;
pub mod hram;

pub use error::{Error, Result};

/// Timestamps are integer microseconds throughout.
pub type Micros = u64;

/// Converts seconds to the nearest whole microsecond.
pub fn secs_to_us(t_s: f64) -> Micros {
    libm::round(t_s * 1e6) as Micros
}
