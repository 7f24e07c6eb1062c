//! Simulation and exact computation for one-dimensional transient random
//! walks in i.i.d. random environment.

pub mod env;
pub mod error;
pub mod experiments;
pub mod limits;
pub mod numerics;
pub mod quenched;
pub mod rng;
pub mod specialfn;
pub mod valleys;
pub mod walk;

pub use error::{Error, Result};
