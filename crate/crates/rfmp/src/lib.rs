//! Regularized Functional Matching Pursuit (RFMP) on the sphere, with a
//! dictionary-learning extension (LRFMP) for the downward continuation of
//! gravitational potential data from satellite height.
//!
//! The library covers:
//!
//! * numerically stable Legendre / spherical-harmonic evaluation including
//!   the solid-harmonic gradients needed for kernel optimization
//!   ([`spherical`]),
//! * Abel–Poisson kernels, their upward continuation and the Sobolev `H_2`
//!   inner products among dictionary elements ([`kernel`]),
//! * equidistributed Reuter point grids ([`grid`]),
//! * the discretized upward-continuation operator ([`operator`]),
//! * dictionaries of spherical harmonics and Abel–Poisson kernels
//!   ([`dictionary`]),
//! * the RFMP engine itself ([`pursuit`]),
//! * the LRFMP learner with ball-constrained kernel optimization
//!   ([`learner`]),
//! * file formats, field evaluation and error metrics ([`io`]).

pub mod dictionary;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod learner;
pub mod operator;
pub mod pursuit;
pub mod spherical;
pub mod types;

pub use error::Error;
pub use types::{BallPoint, LocalBasis, PolarCoord, SHIndex, Vec3};
