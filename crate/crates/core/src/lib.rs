//! Numerics for the minimum of a binary branching random walk pushed above a
//! hard wall: tail recursions, one-dimensional spine chains, a smoothing free
//! energy recursion and Monte Carlo checks.

pub mod chain;
pub mod convolve;
pub mod error;
pub mod fit;
pub mod free_energy;
pub mod grid;
pub mod mc;
pub mod model;
pub mod special;
pub mod spine;
pub mod tails;

pub use convolve::{log_convolve_gaussian, EdgeReport, Extension};
pub use error::{HardwallError, Result};
pub use grid::{GridSpec, LogGridFunction};
