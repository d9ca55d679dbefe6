//! Generalized multiscale finite elements for slightly compressible
//! single-phase flow on structured hexahedral grids.

pub mod coarse;
pub mod error;
pub mod fem;
pub mod grid;
pub mod harness;
pub mod linsolve;
pub mod model;
pub mod offline;
pub mod online;
pub mod sparse;

pub use error::{Error, Result};
