//! Link-level building blocks for code-domain NOMA over a user-grouped
//! hybrid massive MIMO system.
//!
//! The crate models an mm-wave cell in which users are partitioned into
//! angular groups, each group served through a shared analog beamformer and a
//! small number of RF chains. On top of the resulting reduced-dimension
//! channels, users of a group are overloaded in the code domain, either with
//! sparse codebooks (SCMA) or with short dense spreading sequences (MUSA).
//!
//! Modules, roughly in pipeline order:
//!
//! * [`linalg`]: Hermitian and generalized eigensolvers, positive definite
//!   solves, complex matrix helpers.
//! * [`scenario`]: configuration types, validation, and the randomized
//!   per-user angle draw.
//! * [`channel`]: per-path covariance construction, correlated Rayleigh
//!   sampling, received-signal covariance.
//! * [`beamform`]: analog eigenbeamformers, RF-chain allocation across paths,
//!   digital combiners, equivalent gain matrices, downlink power scaling.
//! * [`noma`]: SCMA codebooks, MUSA spreading codes, symbol mapping, chip
//!   assembly.
//! * [`phy`]: chip-level downlink and uplink propagation plus per-user stream
//!   extraction and the analytic post-combining noise correlation.
//! * [`rx`]: message-passing, MMSE-SIC, interference-cancellation and
//!   matched-filter-bound detectors.
//! * [`air`]: mismatched-decoding achievable-rate accumulators.
//!
//! Everything is deterministic given a root seed; randomness flows through
//! counter-derived [`rand_chacha::ChaCha8Rng`] streams (see [`rng`]).
//!
//! The crate is `no_std`-compatible (with `alloc`) when built without the
//! default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod air;
pub mod beamform;
pub mod channel;
pub mod linalg;
pub mod noma;
pub mod phy;
pub mod rng;
pub mod rx;
pub mod scenario;

use num_complex::Complex;

/// Complex scalar used throughout.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVec = nalgebra::DVector<C64>;

/// Shorthand for a complex value from real and imaginary parts.
#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}
