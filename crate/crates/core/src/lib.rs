//! Simulation and analysis toolkit for coarsening dynamics of antiferromagnetic
//! domains in driven Rydberg-atom arrays.

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod krylov;
pub mod lattice;
pub mod lsq;
pub mod meanfield;
pub mod ode;
pub mod pipeline;
pub mod quantum;
pub mod schedule;
pub mod snapshot;
pub mod spectra;
pub mod theory;

pub use error::{Error, Result};
pub use lattice::{blockade_radius, manhattan_distance, mhz, Boundary, Cutoff, Lattice, Site};
