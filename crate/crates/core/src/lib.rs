//! Transport-map density estimation for multi-resolution spatial ensembles.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod likelihood;
pub mod model;
pub mod ordering;
pub mod predict;
pub mod rng;
pub mod simdata;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};
