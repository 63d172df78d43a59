//! Gradient-free training of fully connected networks.
//!
//! The network is split into per-layer blocks `(W_l, b_l, z_l, a_l)` and the
//! relaxed problem
//!
//! ```text
//! min  R(z_L; y) + sum_l Omega_l(W_l) + rho/2 sum_l ||z_l - W_l a_{l-1} - b_l||^2
//! s.t. h_l(z_l) - eps <= a_l <= h_l(z_l) + eps     (l < L)
//! ```
//!
//! is solved by alternating block minimization with quadratic surrogates
//! ([`subproblems`]). One full sweep is treated as a fixed-point map and
//! accelerated by a safeguarded, limited-memory type-I Anderson scheme
//! ([`anderson`]). Baseline optimizers live in [`baselines`].
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled;
//! file formats and the command-line driver live in the companion `aadladmm`
//! crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod anderson;
pub mod baselines;
pub mod data;
mod error;
pub mod linalg;
pub mod model;
pub mod subproblems;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
