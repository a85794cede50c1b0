//! Simulation, steady-state analysis and passivity certificates for DC
//! microgrids supplying unknown ZIP loads through Buck converters.

pub mod brayton_moser;
pub mod control;
pub mod error;
pub mod network;
pub mod output;
pub mod passivity;
pub mod scenario;
pub mod simulation;
pub mod steady_state;

pub use error::{Error, Result};
pub use network::{DguParams, LineParams, Network, NetworkState, ZipLoad};
