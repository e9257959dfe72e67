//! Joint person re-identification and camera network topology inference for
//! non-overlapping camera networks.
//!
//! Appearance is matched with random forests trained per destination camera
//! or entry zone over sliding time slots. Reliable matches produce transit
//! time histograms whose Gaussian fits score each link; the fitted links in
//! turn narrow the search windows for the next round of matching.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod forest;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod simgen;
pub mod topology;
pub mod types;

pub use error::{Error, Result};
