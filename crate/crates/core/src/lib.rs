//! Stratonovich diffusions on compact manifolds (spheres and the flat
//! 2-torus): simulation, generators, stochastic line integrals of 1-forms,
//! cycle and occupation-measure estimates, and Lyapunov-function checks.

pub mod catalog;
pub mod cycles;
pub mod error;
pub mod forms;
pub mod generator;
pub mod geometry;
pub mod lyapunov;
pub mod measures;
pub mod sde;
pub mod stats;
pub mod suite;

pub use error::{Error, Result};
