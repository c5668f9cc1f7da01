//! Simulation and analysis of heralded single-photon absorption by a
//! trapped ion: polarization algebra, the biphoton source model, a
//! Monte Carlo event generator, trigger/onset correlation, fringe fitting
//! and two-qubit tomography.

pub mod biphoton;
pub mod correlate;
pub mod error;
pub mod exec;
pub mod fringes;
pub mod pipeline;
pub mod polarization;
pub mod presets;
pub mod sim;
pub mod tomography;

pub use error::{Error, Result};
pub use exec::Execution;
