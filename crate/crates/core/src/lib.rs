//! Viscous splitting laboratory.
//!
//! Periodic spectral fields, the heat semigroup, grid diffeomorphisms, the
//! Lagrangian Euler flow, a generic Lie-Trotter product engine, and a
//! splitting solver for incompressible Navier-Stokes built from them.

pub mod diffeo;
pub mod error;
pub mod euler;
pub mod expm;
pub mod fields;
pub mod fit;
pub mod grid;
pub mod heat;
pub mod interp;
pub mod nssolver;
pub mod rng;
mod spectral;
pub mod trotter;

pub use diffeo::{Diffeo, DiffeoConfig};
pub use error::{Error, Result};
pub use euler::LagrangianState;
pub use grid::{Grid, GridField};
pub use heat::{HeatMethod, HeatParams};
pub use interp::Interpolation;
pub use nssolver::{NsConfig, NsSnapshot};
pub use trotter::{FlowMap, StateVector};
