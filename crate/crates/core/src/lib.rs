pub mod config;
pub mod error;
pub mod gridgen;
pub mod lp;
pub mod model;
pub mod nets;
pub mod oracle;
pub mod outer;
pub mod risk;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
