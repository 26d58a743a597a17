pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod lattice;
pub mod output;
pub mod stability;

pub use error::{Error, GuardViolation, Result};
