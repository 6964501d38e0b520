//! Numerical laboratory for the periodic stochastic heat equation
//!
//! ```text
//!     ∂u/∂t = Δu + σ(u) Ẇ(t,x),   x ∈ [-π, π) periodic
//! ```
//!
//! driven by space-time white noise, with a noise coefficient growing like
//! `|u|^{3/2}`. The crate provides
//!
//! - [`heat_kernel`]: the periodic heat kernel as a cosine series, its norms,
//!   and the spectral heat semigroup on uniform grids;
//! - [`noise`]: reproducible discretized white noise and Walsh integrals;
//! - [`coefficients`]: noise coefficients σ, the singular drift `u^{-α}` and
//!   their clamped (globally Lipschitz) versions;
//! - [`solver`]: exponential-Euler time stepping for the solution `u` and the
//!   dominating positive processes `v`, `v₋`, plus the stochastic convolution
//!   and its factorized reconstruction;
//! - [`stopping`]: threshold stopping times and the dyadic doubling ladder;
//! - [`ensemble`]: parallel, seed-deterministic replica runs and the
//!   statistical verifiers built on them;
//! - [`cli`]: configuration files, subcommand dispatch and bit-stable output.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coefficients;
pub mod ensemble;
mod error;
pub mod heat_kernel;
pub mod noise;
pub mod solver;
pub mod stats;
pub mod stopping;

pub use error::{Error, Result};
pub use heat_kernel::{Field, KernelSpec, Normalization};
pub use noise::{GridSpec, NoiseSlice};
