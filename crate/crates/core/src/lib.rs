//! Simulation and pathwise calculus for weak Dirichlet processes.
//!
//! The crate is organised around [`SamplePath`]: a process observed on a
//! finite [`Subdivision`] together with an explicit ledger of its jumps. Every
//! estimator reads values at grid points only, so coarser subdivision levels
//! are obtained by subsampling a path simulated on the finest grid.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common `f64` instantiation.

pub mod convolution;
pub mod decompose;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod ito;
pub mod mc;
pub mod num;
pub mod paths;
pub mod pathology;
pub mod quad;

pub use error::{Error, Result};
pub use grid::{Dyadic, Subdivision, SubdivisionSequence};
pub use num::Real;
pub use paths::{DriverSpec, Jump, JumpCompensator, SamplePath};

pub type Path64 = paths::SamplePath<f64>;
pub type Path32 = paths::SamplePath<f32>;
pub type Grid64 = grid::Subdivision<f64>;
pub type Sequence64 = grid::SubdivisionSequence<f64>;

pub type Kernel64 = convolution::KernelSpec<f64>;
pub type Decomposition64 = decompose::Decomposition<f64>;
