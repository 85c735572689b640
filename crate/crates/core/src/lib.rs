pub mod attention;
pub mod batcher;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod synthgen;
pub mod ops;
pub mod pipeline;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
