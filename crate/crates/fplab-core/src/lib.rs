//! Numerical core for Fokker-Planck problems on a periodic box: spectral
//! calculus on power-of-two grids, mollification, commutator fields, norms,
//! IMEX solvers for both equation forms, and an Euler-Maruyama particle scheme.
//!
//! Everything here is deterministic (seeded) and IO-free; the companion crate
//! `fplab` adds scenario files, CSV output, manifests, and a CLI on top.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod calculus;
pub mod coeffs;
pub mod commutators;
pub mod error;
mod fft;
pub mod field;
pub mod grid;
pub mod mollify;
pub mod norms;
pub mod sde;
pub mod solver;

pub use error::CoreError;
