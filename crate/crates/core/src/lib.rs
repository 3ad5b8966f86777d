//! Training and evaluation of universal, targeted label-switch patches for
//! grid-based object detectors.

// `!(x >= 0.0)` style checks are how validation rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmentation;
mod codec;
pub mod detection;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod io;
pub mod losses;
pub mod matching;
pub mod nn;
pub mod projection;
pub mod trainer;

pub use error::{Error, Result};
