pub mod artifact;
pub mod cli;
pub mod clustering;
pub mod cnn;
pub mod config;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod interpret;
pub mod meta;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
