pub mod commands;
pub mod config;
pub mod data;
pub mod dtw;
pub mod em;
pub mod emission;
pub mod error;
pub mod gpr;
pub mod optim;
pub mod plot;
pub mod sampler;
pub mod sim;
pub mod stack;
pub mod transition;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
