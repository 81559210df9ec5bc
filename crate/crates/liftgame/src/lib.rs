//! Experiments, training, and file plumbing around `liftgame-core`.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod io;
pub mod sim;
pub mod stats;
pub mod training;
