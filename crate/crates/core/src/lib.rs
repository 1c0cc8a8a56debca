//! Numerical laboratory for the heat-conducting compressible Navier-Stokes-Fourier
//! system in thin pipes `εQ × (0,1)` and its one-dimensional limit.

pub mod error;
pub mod harness;
pub mod inequalities;
pub mod profile;
pub mod relent;
pub mod sampling;
pub mod solver1d;
pub mod solver3d;
pub mod thermo;

pub use error::{NsfError, Result};
pub use thermo::{PressureClosure, ThermoModel, ThermoParams};
