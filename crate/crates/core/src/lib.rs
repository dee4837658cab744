//! Delay distributions for single-server FIFO queues fed by a Markovian
//! arrival process, with mixture service times (phase-type plus a small
//! heavy-tailed fraction).

pub mod base_solver;
pub mod correction;
pub mod error;
pub mod expmeasure;
pub mod heavytail;
pub mod inversion;
pub mod model;
pub mod oracle;
pub mod par;
pub mod perturbation;
pub mod polyalg;
pub mod precision;
pub mod symbolic_kernel;
pub mod quad;

pub use error::{Error, Result};
