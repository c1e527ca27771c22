//! One-sided direct-forcing immersed boundary method with moving-least-squares
//! coupling kernels, embedded in a collocated incompressible Navier–Stokes
//! projection solver.

pub mod cases;
pub mod config;
pub mod coupling;
pub mod driver;
pub mod error;
pub mod fluid;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod linsolve;
pub mod mls;
pub mod output;

pub use error::{Error, Result};
