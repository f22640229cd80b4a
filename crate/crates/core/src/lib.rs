//! Rigid bodies in an incompressible viscous fluid, approximated as regions of very
//! high viscosity in a penalized, mollified Navier–Stokes system on a periodic box.

pub mod advection;
pub mod config;
pub mod diagnostics;
pub mod elliptic;
pub mod field;
pub mod grid;
pub mod jet;
pub mod mollifier;
pub mod rigidbody;
pub mod rotation;
pub mod scenario;
pub mod shapes;
pub mod solver;
pub mod spectral;
pub mod viscous;

pub use config::{load_config, Config, ConfigError};
pub use field::{ScalarField, TensorField, VectorField};
pub use grid::{GridError, TorusGrid};
pub use mollifier::MollifierKernel;
pub use spectral::Spectral;
