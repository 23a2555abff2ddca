// `!(x > 0.0)`-style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fft;
pub mod greenkubo;
pub mod lattice;
pub mod observables;
pub mod resolvent;
pub mod rng;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
