//! Companion crate to `evspike-core`: file formats, configuration, the
//! benchmark runner and the `evspike` command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod checks;
pub mod config;
pub mod experiment;
pub mod io;
