//! Numerical toolkit for mixed local/nonlocal Brezis–Nirenberg problems with
//! a Choquard (Hartree) critical term on bounded domains.
//!
//! Everything is discretized on a uniform cell-centered grid in the cube
//! [-L, L]^n. Nonlocal sums go through a zero-padded FFT convolution.

pub mod choquard;
pub mod config;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod kernels;
pub mod operators;
pub mod optim;
pub mod quad;
pub mod spectral;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
